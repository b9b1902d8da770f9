//! Residual-learning networks and the estimators built on them.

pub mod dataset;
pub mod mlp;
pub mod normalizer;
pub mod train;

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ScattererState, UeState, Vec3};
use crate::linalg::{self, Weighting};
use crate::scatterer_wls::build_scatterer_system;
use crate::ue_wls::build_system;
use dataset::Dataset;
use mlp::OutputActivation;
pub use train::{ScaledNet, TrainConfig, TrainReport};

pub const MODEL_FORMAT: &str = "mmloc-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Predicts the UE pseudo-linear residual from the measurement vector.
    Residual,
    /// Predicts the UE state directly.
    Blackbox,
    /// Predicts a scatterer's pseudo-linear residual.
    ScattererResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub net: ScaledNet,
}

impl Model {
    pub fn new(kind: ModelKind, net: ScaledNet) -> Self {
        Self { format: MODEL_FORMAT.into(), version: MODEL_VERSION, kind, net }
    }

    pub fn input_width(&self) -> usize {
        self.net.net.input_width()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_width() {
            return Err(Error::dim("model input", self.input_width(), x.len()));
        }
        Ok(self.net.predict(x))
    }

    fn expect(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidConfig(format!("expected a {kind:?} model, got {:?}", self.kind)));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string(self).map_err(|e| Error::parse(path, e.to_string()))?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Model = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::parse(path, format!("unsupported model format {} v{}", model.format, model.version)));
        }
        let expected = mlp::Mlp::param_count(&model.net.net.widths);
        if model.net.net.params.len() != expected {
            return Err(Error::dim("model parameters", expected, model.net.net.params.len()));
        }
        Ok(model)
    }
}

/// Train the residual network (UE or scatterer, depending on the dataset).
pub fn train_residual(cfg: &TrainConfig, train: &Dataset, val: &Dataset) -> Result<(Model, TrainReport)> {
    let (net, report) = train::train(
        cfg,
        OutputActivation::Sigmoid,
        &train.inputs(),
        &train.targets(),
        &val.inputs(),
        &val.targets(),
    )?;
    let kind = if train.meta.scatterer.is_some() { ModelKind::ScattererResidual } else { ModelKind::Residual };
    Ok((Model::new(kind, net), report))
}

/// Train a direct state regressor with a linear 6-wide head.
pub fn train_blackbox(cfg: &TrainConfig, train: &Dataset, val: &Dataset) -> Result<(Model, TrainReport)> {
    let states = |d: &Dataset| -> Vec<Vec<f64>> {
        d.samples.iter().map(|s| s.ue.to_vector().as_slice().to_vec()).collect()
    };
    let (ts, vs) = (states(train), states(val));
    let tr: Vec<&[f64]> = ts.iter().map(|v| v.as_slice()).collect();
    let vr: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
    let (net, report) = train::train(cfg, OutputActivation::Linear, &train.inputs(), &tr, &val.inputs(), &vr)?;
    Ok((Model::new(ModelKind::Blackbox, net), report))
}

/// Learned residual for a UE measurement vector.
pub fn predict_residual(model: &Model, m: &DVector<f64>) -> Result<DVector<f64>> {
    model.expect(ModelKind::Residual)?;
    Ok(DVector::from_vec(model.predict(m.as_slice())?))
}

/// Single WLS solve with `W = (e e^T + eps I)^-1` built from the learned residual.
pub fn nn_wls_with_residual(m: &DVector<f64>, rrhs: &[Vec3], e: &DVector<f64>, eps: f64) -> Result<UeState> {
    let (h, g) = build_system(m, rrhs)?;
    let x = linalg::weighted_least_squares(&h, &g, Weighting::RankOneRidge { e, eps })?;
    Ok(UeState::from_slice(x.as_slice()))
}

pub fn nn_wls_estimate(model: &Model, m: &DVector<f64>, rrhs: &[Vec3], eps: f64) -> Result<UeState> {
    let e = predict_residual(model, m)?;
    nn_wls_with_residual(m, rrhs, &e, eps)
}

/// Ordinary least squares after subtracting the learned residual from `h`.
pub fn nn_ls_estimate(model: &Model, m: &DVector<f64>, rrhs: &[Vec3]) -> Result<UeState> {
    let e = predict_residual(model, m)?;
    let (h, g) = build_system(m, rrhs)?;
    let x = linalg::weighted_least_squares(&(h - e), &g, Weighting::Identity)?;
    Ok(UeState::from_slice(x.as_slice()))
}

pub fn blackbox_estimate(model: &Model, m: &DVector<f64>) -> Result<UeState> {
    model.expect(ModelKind::Blackbox)?;
    let y = model.predict(m.as_slice())?;
    Ok(UeState::from_slice(&y))
}

/// Scatterer analogue of NN-WLS on the four-element path measurement.
pub fn nn_wls_scatterer(
    model: &Model,
    ms: &DVector<f64>,
    b_n: &Vec3,
    b_ref: &Vec3,
    ue: &UeState,
    eps: f64,
) -> Result<ScattererState> {
    model.expect(ModelKind::ScattererResidual)?;
    let e = DVector::from_vec(model.predict(ms.as_slice())?);
    let (h, g, t) = build_scatterer_system(ms, b_n, b_ref, ue)?;
    let x = linalg::weighted_least_squares(&h, &(g * t), Weighting::RankOneRidge { e: &e, eps })?;
    Ok(ScattererState { position: Vec3::new(x[0], x[1], x[2]), speed: x[3] })
}
