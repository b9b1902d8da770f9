//! Ensembles of independently initialised residual networks: density vote
//! (ENN-A), averaged residual outer product (ENN-B) and plain mean (ENN-M).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{UeState, Vec3};
use crate::linalg::{self, Weighting, MAX_CONDITION};
use crate::nn::dataset::Dataset;
use crate::nn::{self, Model, TrainConfig};
use crate::par::{self, Execution};
use crate::ue_wls::build_system;

pub const MANIFEST_FORMAT: &str = "mmloc-ensemble";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    /// Subtractive-clustering radius for positions (m).
    pub r_a: f64,
    /// Radius for velocities (m/s); defaults to `r_a`.
    pub r_a_velocity: Option<f64>,
    /// Per-member training seeds; `base_seed + p` when empty.
    pub seeds: Vec<u64>,
    pub base_seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { members: 20, r_a: 0.1, r_a_velocity: None, seeds: Vec::new(), base_seed: 1000 }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(Error::InvalidConfig(format!("an ensemble needs at least 2 members, got {}", self.members)));
        }
        if !(self.r_a > 0.0) || self.r_a_velocity.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::InvalidConfig("clustering radius must be positive".into()));
        }
        if !self.seeds.is_empty() && self.seeds.len() != self.members {
            return Err(Error::InvalidConfig(format!(
                "{} seeds given for {} members",
                self.seeds.len(),
                self.members
            )));
        }
        Ok(())
    }

    pub fn seed(&self, p: usize) -> u64 {
        self.seeds.get(p).copied().unwrap_or(self.base_seed + p as u64)
    }
}

/// `D_p = sum_j exp(-|x_p - x_j|^2 / (r_a / 2)^2)`, self term included.
pub fn density_measure(preds: &[Vec3], p: usize, r_a: f64) -> f64 {
    let scale = (r_a / 2.0).powi(2);
    preds.iter().map(|x| (-(preds[p] - x).norm_squared() / scale).exp()).sum()
}

/// The prediction with the highest density; ties go to the lowest index.
pub fn subtractive_pick(preds: &[Vec3], r_a: f64) -> Option<Vec3> {
    let mut best: Option<(usize, f64)> = None;
    for p in 0..preds.len() {
        let d = density_measure(preds, p, r_a);
        if best.is_none_or(|(_, b)| d > b) {
            best = Some((p, d));
        }
    }
    best.map(|(p, _)| preds[p])
}

/// Per-member residuals and NN-WLS estimates for one measurement vector.
#[derive(Debug, Clone)]
pub struct MemberOutputs {
    pub residuals: Vec<DVector<f64>>,
    pub states: Vec<UeState>,
}

pub fn member_outputs(models: &[Model], m: &DVector<f64>, rrhs: &[Vec3], eps: f64) -> Result<MemberOutputs> {
    if models.is_empty() {
        return Err(Error::InvalidConfig("empty ensemble".into()));
    }
    let mut residuals = Vec::with_capacity(models.len());
    let mut states = Vec::with_capacity(models.len());
    for model in models {
        let e = nn::predict_residual(model, m)?;
        states.push(nn::nn_wls_with_residual(m, rrhs, &e, eps)?);
        residuals.push(e);
    }
    Ok(MemberOutputs { residuals, states })
}

pub fn combine_vote(out: &MemberOutputs, r_a: f64, r_a_velocity: f64) -> UeState {
    let pos: Vec<Vec3> = out.states.iter().map(|s| s.position).collect();
    let vel: Vec<Vec3> = out.states.iter().map(|s| s.velocity).collect();
    UeState::new(
        subtractive_pick(&pos, r_a).expect("non-empty ensemble"),
        subtractive_pick(&vel, r_a_velocity).expect("non-empty ensemble"),
    )
}

/// Mean of the member states, accumulated as offsets from the first member.
pub fn combine_mean(out: &MemberOutputs) -> UeState {
    let first = out.states[0];
    let n = out.states.len() as f64;
    let (mut dp, mut dv) = (Vec3::zeros(), Vec3::zeros());
    for s in &out.states {
        dp += s.position - first.position;
        dv += s.velocity - first.velocity;
    }
    UeState::new(first.position + dp / n, first.velocity + dv / n)
}

#[derive(Debug, Clone)]
pub struct AveragedWeighting {
    pub state: UeState,
    /// The averaged outer product was singular and `eps I` was added.
    pub ridge_engaged: bool,
}

/// Single WLS solve with `W = (mean_p e_p e_p^T)^-1`, ridged only when singular.
pub fn combine_averaged(out: &MemberOutputs, m: &DVector<f64>, rrhs: &[Vec3], eps: f64) -> Result<AveragedWeighting> {
    let k = m.len();
    let mut s = DMatrix::zeros(k, k);
    for e in &out.residuals {
        s += e * e.transpose();
    }
    s /= out.residuals.len() as f64;
    let (h, g) = build_system(m, rrhs)?;
    let singular = linalg::equilibrated_condition(&s) > MAX_CONDITION || s.clone().cholesky().is_none();
    if singular {
        s += DMatrix::identity(k, k) * eps;
    }
    let x = linalg::weighted_least_squares(&h, &g, Weighting::InverseOf(&s))?;
    Ok(AveragedWeighting { state: UeState::from_slice(x.as_slice()), ridge_engaged: singular })
}

pub fn enn_a_wls(models: &[Model], m: &DVector<f64>, rrhs: &[Vec3], eps: f64, r_a: f64) -> Result<UeState> {
    Ok(combine_vote(&member_outputs(models, m, rrhs, eps)?, r_a, r_a))
}

pub fn enn_b_wls(models: &[Model], m: &DVector<f64>, rrhs: &[Vec3], eps: f64) -> Result<AveragedWeighting> {
    combine_averaged(&member_outputs(models, m, rrhs, eps)?, m, rrhs, eps)
}

pub fn enn_m_wls(models: &[Model], m: &DVector<f64>, rrhs: &[Vec3], eps: f64) -> Result<UeState> {
    Ok(combine_mean(&member_outputs(models, m, rrhs, eps)?))
}

/// Train every member on the same data with its own initialisation seed.
pub fn train_ensemble(
    train_cfg: &TrainConfig,
    cfg: &EnsembleConfig,
    train: &Dataset,
    val: &Dataset,
    exec: Execution,
) -> Result<Vec<Model>> {
    cfg.validate()?;
    par::map_indexed(cfg.members, exec, |p| {
        let member_cfg = TrainConfig { seed: cfg.seed(p), ..train_cfg.clone() };
        nn::train_residual(&member_cfg, train, val).map(|(model, _)| model)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub format: String,
    pub version: u32,
    pub config: EnsembleConfig,
    /// Member model files, relative to the manifest's directory.
    pub members: Vec<String>,
}

impl EnsembleManifest {
    pub fn new(config: EnsembleConfig, members: Vec<String>) -> Self {
        Self { format: MANIFEST_FORMAT.into(), version: MANIFEST_VERSION, config, members }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self).map_err(|e| Error::parse(path, e.to_string()))?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
            return Err(Error::parse(path, format!("unsupported manifest {} v{}", manifest.format, manifest.version)));
        }
        Ok(manifest)
    }

    pub fn member_paths(&self, manifest_path: &Path) -> Vec<PathBuf> {
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        self.members.iter().map(|m| dir.join(m)).collect()
    }

    pub fn load_members(&self, manifest_path: &Path) -> Result<Vec<Model>> {
        let models: Vec<Model> = self.member_paths(manifest_path).iter().map(|p| Model::load(p)).collect::<Result<_>>()?;
        if let Some(first) = models.first() {
            if let Some(bad) = models.iter().find(|m| m.net.net.widths != first.net.net.widths) {
                return Err(Error::dim("ensemble member width", first.input_width(), bad.input_width()));
            }
        }
        Ok(models)
    }
}
