//! Seeded Monte Carlo campaigns and their metrics.
//!
//! Every trial draws from its own stream keyed by `(seed, trial index)`, and
//! per-trial results are reduced in index order, so reports do not depend on
//! the number of workers.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::crlb::{crlb_scatterer, crlb_ue, Crlb};
use crate::ensemble::{self, MemberOutputs};
use crate::error::{Error, Result};
use crate::geometry::{ScattererState, UeState};
use crate::nn::dataset::Dataset;
use crate::nn::{self, Model};
use crate::noise::{build_q, build_q_scatterer, NoiseConfig, Sampler};
use crate::par::{self, Execution};
use crate::rng::{self, Purpose};
use crate::scatterer_wls::{scatterer_measurement, scatterer_wls_solve};
use crate::scenario::Scenario;
use crate::selection::{measurement_from_paths, select_los, simulate_paths, SelectionConfig, SPEED_OF_LIGHT};
use crate::ue_wls::{measurement_vector, wls_solve};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct MetricReport {
    pub trials: usize,
    pub failures: usize,
    pub rmse_position: f64,
    pub rmse_velocity: f64,
    pub mae_position: f64,
    pub mae_velocity: f64,
    pub crlb_trace_position: Option<f64>,
    pub crlb_trace_velocity: Option<f64>,
    pub success_rate: Option<f64>,
    /// Mean error per state component.
    pub bias: Vec<f64>,
    /// Standard deviation of the error per state component.
    pub std: Vec<f64>,
    #[serde(skip)]
    pub runtime: Duration,
}

/// Equality ignores the wall-clock runtime.
impl PartialEq for MetricReport {
    fn eq(&self, o: &Self) -> bool {
        self.trials == o.trials
            && self.failures == o.failures
            && self.rmse_position == o.rmse_position
            && self.rmse_velocity == o.rmse_velocity
            && self.mae_position == o.mae_position
            && self.mae_velocity == o.mae_velocity
            && self.crlb_trace_position == o.crlb_trace_position
            && self.crlb_trace_velocity == o.crlb_trace_velocity
            && self.success_rate == o.success_rate
            && self.bias == o.bias
            && self.std == o.std
    }
}

impl MetricReport {
    pub fn failure_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.failures as f64 / self.trials as f64
        }
    }

    /// RMSE over the square root of the bound's trace.
    pub fn position_ratio(&self) -> Option<f64> {
        self.crlb_trace_position.map(|t| self.rmse_position / t.sqrt())
    }

    pub fn velocity_ratio(&self) -> Option<f64> {
        self.crlb_trace_velocity.map(|t| self.rmse_velocity / t.sqrt())
    }
}

/// Error metrics of state estimates. Vectors hold position components first
/// and velocity (or speed) components after `split`.
pub fn compute_errors(estimates: &[Vec<f64>], truths: &[Vec<f64>], split: usize, crlb: Option<&Crlb>) -> Result<MetricReport> {
    if estimates.is_empty() {
        return Err(Error::InvalidConfig("no estimates to score".into()));
    }
    if estimates.len() != truths.len() {
        return Err(Error::dim("estimates vs truths", truths.len(), estimates.len()));
    }
    let dim = truths[0].len();
    let n = estimates.len() as f64;
    let mut bias = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let (mut sp, mut sv, mut ap, mut av) = (0.0, 0.0, 0.0, 0.0);
    for (est, truth) in estimates.iter().zip(truths) {
        if est.len() != dim || truth.len() != dim {
            return Err(Error::dim("state vector", dim, est.len()));
        }
        let err: Vec<f64> = est.iter().zip(truth).map(|(e, t)| e - t).collect();
        for k in 0..dim {
            bias[k] += err[k];
            sq[k] += err[k] * err[k];
        }
        let p2: f64 = err[..split].iter().map(|v| v * v).sum();
        let v2: f64 = err[split..].iter().map(|v| v * v).sum();
        sp += p2;
        sv += v2;
        ap += p2.sqrt();
        av += v2.sqrt();
    }
    let bias: Vec<f64> = bias.iter().map(|b| b / n).collect();
    let std = sq.iter().zip(&bias).map(|(s, b)| (s / n - b * b).max(0.0).sqrt()).collect();
    Ok(MetricReport {
        trials: estimates.len(),
        failures: 0,
        rmse_position: (sp / n).sqrt(),
        rmse_velocity: (sv / n).sqrt(),
        mae_position: ap / n,
        mae_velocity: av / n,
        crlb_trace_position: crlb.map(Crlb::position_trace),
        crlb_trace_velocity: crlb.map(Crlb::velocity_trace),
        success_rate: None,
        bias,
        std,
        runtime: Duration::ZERO,
    })
}

pub fn compute_metrics(estimates: &[UeState], truths: &[UeState], crlb: Option<&Crlb>) -> Result<MetricReport> {
    let flat = |s: &[UeState]| -> Vec<Vec<f64>> { s.iter().map(|x| x.to_vector().as_slice().to_vec()).collect() };
    compute_errors(&flat(estimates), &flat(truths), 3, crlb)
}

fn scatterer_vec(s: &ScattererState) -> Vec<f64> {
    s.to_vector().as_slice().to_vec()
}

/// Metrics of the successful trials, with failures counted against the total.
fn score(
    outcomes: Vec<Result<Vec<f64>>>,
    truth: &[f64],
    split: usize,
    crlb: Option<&Crlb>,
) -> MetricReport {
    let total = outcomes.len();
    let ok: Vec<Vec<f64>> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    let failures = total - ok.len();
    let mut report = if ok.is_empty() {
        MetricReport { crlb_trace_position: crlb.map(Crlb::position_trace), crlb_trace_velocity: crlb.map(Crlb::velocity_trace), ..Default::default() }
    } else {
        let truths = vec![truth.to_vec(); ok.len()];
        compute_errors(&ok, &truths, split, crlb).expect("matching dimensions")
    };
    report.trials = total;
    report.failures = failures;
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub ue: MetricReport,
    pub scatterers: Vec<MetricReport>,
}

struct TrialOutcome {
    ue: Result<Vec<f64>>,
    scatterers: Vec<Result<Vec<f64>>>,
}

/// WLS Monte Carlo at one noise setting: UE from the first `n_a` RRHs (or from
/// LOS selection when enabled), then every configured scatterer from the UE estimate.
pub fn run_wls_campaign(sc: &Scenario, noise: &NoiseConfig) -> Result<CampaignReport> {
    sc.validate()?;
    let start = Instant::now();
    let all = sc.all_rrhs();
    let rrhs = sc.active_rrhs();
    let truth = sc.ue_state();
    let q = build_q(sc.n_a, noise)?;
    let m0 = measurement_vector(&truth, &rrhs)?;
    let sampler = Sampler::new(sc.n_a, noise)?;
    let qs = build_q_scatterer(noise)?;
    let s_sampler = Sampler::for_scatterer(noise)?;
    let scatterers: Vec<_> = sc
        .scatterers
        .iter()
        .map(|s| Ok((s.state(), all[s.rrh], scatterer_measurement(&s.state(), &all[s.rrh], &rrhs[0], &truth)?)))
        .collect::<Result<_>>()?;
    let sel_cfg = SelectionConfig { count: sc.selection.count, ..Default::default() };
    let path_cfg = crate::selection::PathSimConfig {
        delta_d: noise.delta_d,
        delta_a: noise.delta_a,
        ..sc.selection.paths
    };

    let outcomes = par::map_indexed(sc.trials, sc.execution, |t| {
        let mut r = rng::stream(sc.seed, Purpose::Trial, t as u64);
        let ue = if sc.selection.enabled {
            simulate_paths(&truth, &all, &path_cfg, &mut r).and_then(|paths| {
                let sel = select_los(&paths, &all, &sel_cfg)?;
                let chosen: Vec<_> = sel.los_set.iter().map(|p| all[p.rrh_index]).collect();
                let m = measurement_from_paths(&sel.los_set, SPEED_OF_LIGHT);
                let q = build_q(chosen.len(), noise)?;
                wls_solve(&m, &chosen, &q, &sc.wls)
            })
        } else {
            sampler.sample(&m0, &mut r).and_then(|m| wls_solve(&m, &rrhs, &q, &sc.wls))
        };
        let scat = scatterers
            .iter()
            .map(|(_, b_n, ms0)| {
                let est = ue.as_ref().map_err(|_| Error::NonFinite("UE estimate unavailable"))?;
                let ms = s_sampler.sample(ms0, &mut r)?;
                scatterer_wls_solve(&ms, b_n, &rrhs[0], &est.state, &qs, &sc.wls).map(|e| scatterer_vec(&e.state))
            })
            .collect();
        TrialOutcome { ue: ue.map(|e| e.state.to_vector().as_slice().to_vec()), scatterers: scat }
    });

    let crlb = crlb_ue(&truth, &rrhs, &q).ok();
    let mut ue_out = Vec::with_capacity(outcomes.len());
    let mut scat_out: Vec<Vec<Result<Vec<f64>>>> = scatterers.iter().map(|_| Vec::with_capacity(outcomes.len())).collect();
    for o in outcomes {
        ue_out.push(o.ue);
        for (k, s) in o.scatterers.into_iter().enumerate() {
            scat_out[k].push(s);
        }
    }
    let mut ue = score(ue_out, truth.to_vector().as_slice(), 3, crlb.as_ref());
    let scatterer_reports = scatterers
        .iter()
        .zip(scat_out)
        .map(|((xs, b_n, _), out)| {
            let bound = crlb_scatterer(xs, b_n, &truth, &qs).ok();
            score(out, &scatterer_vec(xs), 3, bound.as_ref())
        })
        .collect();
    ue.runtime = start.elapsed();
    Ok(CampaignReport { ue, scatterers: scatterer_reports })
}

/// Fraction of trials in which every selected path is a true LOS path.
pub fn run_sr_campaign(sc: &Scenario) -> Result<MetricReport> {
    sc.validate()?;
    if !(sc.selection.paths.p_d > 0.0 && sc.selection.paths.p_d <= 1.0) {
        return Err(Error::InvalidConfig(format!("p_d must be in (0, 1], got {}", sc.selection.paths.p_d)));
    }
    let start = Instant::now();
    let all = sc.all_rrhs();
    let truth = sc.ue_state();
    let sel_cfg = SelectionConfig { count: sc.selection.count, ..Default::default() };
    let outcomes = par::map_indexed(sc.trials, sc.execution, |t| -> Result<bool> {
        let mut r = rng::stream(sc.seed, Purpose::Paths, t as u64);
        let paths = simulate_paths(&truth, &all, &sc.selection.paths, &mut r)?;
        Ok(select_los(&paths, &all, &sel_cfg)?.all_los())
    });
    let mut successes = 0usize;
    let mut failures = 0usize;
    for o in &outcomes {
        match o {
            Ok(true) => successes += 1,
            Ok(false) => {}
            Err(_) => failures += 1,
        }
    }
    Ok(MetricReport {
        trials: sc.trials,
        failures,
        success_rate: Some(successes as f64 / sc.trials as f64),
        runtime: start.elapsed(),
        ..Default::default()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Wls,
    Blackbox,
    NnWls,
    NnLs,
    EnnA,
    EnnB,
    EnnM,
}

impl Pipeline {
    pub const ALL: [Pipeline; 7] = [
        Pipeline::Wls,
        Pipeline::Blackbox,
        Pipeline::NnWls,
        Pipeline::NnLs,
        Pipeline::EnnA,
        Pipeline::EnnB,
        Pipeline::EnnM,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Wls => "wls",
            Pipeline::Blackbox => "blackbox",
            Pipeline::NnWls => "nn_wls",
            Pipeline::NnLs => "nn_ls",
            Pipeline::EnnA => "enn_a",
            Pipeline::EnnB => "enn_b",
            Pipeline::EnnM => "enn_m",
        }
    }
}

/// Trained models available to the learned pipelines.
#[derive(Debug, Clone, Copy, Default)]
pub struct Models<'a> {
    pub residual: Option<&'a Model>,
    pub blackbox: Option<&'a Model>,
    pub ensemble: &'a [Model],
}

#[derive(Debug, Clone, Copy)]
pub struct NnSettings {
    pub eps: f64,
    pub r_a: f64,
    pub r_a_velocity: f64,
    pub wls: crate::ue_wls::WlsConfig,
    pub execution: Execution,
}

fn need<'a>(m: Option<&'a Model>, what: &str) -> Result<&'a Model> {
    m.ok_or_else(|| Error::InvalidConfig(format!("pipeline needs a {what} model")))
}

fn estimate_one(
    pipeline: Pipeline,
    models: &Models<'_>,
    m: &DVector<f64>,
    rrhs: &[crate::geometry::Vec3],
    q: &nalgebra::DMatrix<f64>,
    settings: &NnSettings,
) -> Result<UeState> {
    let members = || -> Result<MemberOutputs> {
        if models.ensemble.is_empty() {
            return Err(Error::InvalidConfig("pipeline needs ensemble members".into()));
        }
        ensemble::member_outputs(models.ensemble, m, rrhs, settings.eps)
    };
    match pipeline {
        Pipeline::Wls => Ok(wls_solve(m, rrhs, q, &settings.wls)?.state),
        Pipeline::Blackbox => nn::blackbox_estimate(need(models.blackbox, "black-box")?, m),
        Pipeline::NnWls => nn::nn_wls_estimate(need(models.residual, "residual")?, m, rrhs, settings.eps),
        Pipeline::NnLs => nn::nn_ls_estimate(need(models.residual, "residual")?, m, rrhs),
        Pipeline::EnnA => Ok(ensemble::combine_vote(&members()?, settings.r_a, settings.r_a_velocity)),
        Pipeline::EnnB => Ok(ensemble::combine_averaged(&members()?, m, rrhs, settings.eps)?.state),
        Pipeline::EnnM => Ok(ensemble::combine_mean(&members()?)),
    }
}

/// Per-sample estimates of one pipeline on a UE test set, in sample order.
pub fn nn_estimates(
    pipeline: Pipeline,
    test: &Dataset,
    models: &Models<'_>,
    settings: &NnSettings,
) -> Result<Vec<Result<UeState>>> {
    if test.meta.scatterer.is_some() {
        return Err(Error::InvalidConfig("UE pipelines need a UE dataset".into()));
    }
    let rrhs = test.meta.rrh_positions();
    let q = build_q(rrhs.len(), &test.meta.noise)?;
    for model in models.residual.into_iter().chain(models.blackbox).chain(models.ensemble.iter()) {
        if model.input_width() != test.meta.input_width() {
            return Err(Error::dim("model input width", test.meta.input_width(), model.input_width()));
        }
    }
    Ok(par::map_indexed(test.len(), settings.execution, |i| {
        let m = DVector::from_column_slice(&test.samples[i].m);
        estimate_one(pipeline, models, &m, &rrhs, &q, settings)
    }))
}

/// MAE/RMSE of one pipeline over a held-out UE dataset.
pub fn run_nn_campaign(
    pipeline: Pipeline,
    test: &Dataset,
    models: &Models<'_>,
    settings: &NnSettings,
) -> Result<MetricReport> {
    let start = Instant::now();
    let estimates = nn_estimates(pipeline, test, models, settings)?;
    let mut ok_est = Vec::new();
    let mut ok_truth = Vec::new();
    for (est, s) in estimates.iter().zip(&test.samples) {
        if let Ok(e) = est {
            ok_est.push(*e);
            ok_truth.push(s.ue);
        }
    }
    let failures = test.len() - ok_est.len();
    let mut report = if ok_est.is_empty() {
        MetricReport::default()
    } else {
        compute_metrics(&ok_est, &ok_truth, None)?
    };
    report.trials = test.len();
    report.failures = failures;
    report.runtime = start.elapsed();
    Ok(report)
}

/// Scatterer test set scored with the learned (or model-based) scatterer solver;
/// the true UE state of each sample is used as the UE input.
pub fn run_scatterer_nn_campaign(
    test: &Dataset,
    model: Option<&Model>,
    eps: f64,
    wls: &crate::ue_wls::WlsConfig,
    exec: Execution,
) -> Result<MetricReport> {
    let sampling = test
        .meta
        .scatterer
        .ok_or_else(|| Error::InvalidConfig("scatterer pipelines need a scatterer dataset".into()))?;
    let rrhs = test.meta.rrh_positions();
    let b_n = rrhs[sampling.rrh];
    let qs = build_q_scatterer(&test.meta.noise)?;
    let out = par::map_indexed(test.len(), exec, |i| {
        let s = &test.samples[i];
        let ms = DVector::from_column_slice(&s.m);
        let est = match model {
            Some(model) => nn::nn_wls_scatterer(model, &ms, &b_n, &rrhs[0], &s.ue, eps),
            None => scatterer_wls_solve(&ms, &b_n, &rrhs[0], &s.ue, &qs, wls).map(|e| e.state),
        };
        est.map(|e| scatterer_vec(&e))
    });
    let mut est = Vec::new();
    let mut truth = Vec::new();
    for (o, s) in out.into_iter().zip(&test.samples) {
        if let (Ok(e), Some(xs)) = (o, s.scatterer) {
            est.push(e);
            truth.push(scatterer_vec(&xs));
        }
    }
    let failures = test.len() - est.len();
    let mut report = if est.is_empty() { MetricReport::default() } else { compute_errors(&est, &truth, 3, None)? };
    report.trials = test.len();
    report.failures = failures;
    Ok(report)
}
