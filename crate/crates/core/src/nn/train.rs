//! Mini-batch ADAM training with a best-validation snapshot.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, OutputActivation};
use super::normalizer::Normalizer;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Learning rate reached at the last epoch by geometric decay; constant when unset.
    pub lr_final: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            lr: 1e-3,
            lr_final: None,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            epochs: 200,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub val_mse: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.eps_adam);
        }
    }
}

/// A network together with the scalings of its inputs and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledNet {
    pub net: Mlp,
    pub input: Normalizer,
    pub target: Normalizer,
}

impl ScaledNet {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.target.inverse(&self.net.forward(&self.input.transform(x)))
    }
}

fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    match cfg.lr_final {
        Some(end) if cfg.epochs > 1 => cfg.lr * (end / cfg.lr).powf(epoch as f64 / (cfg.epochs - 1) as f64),
        _ => cfg.lr,
    }
}

/// Fit a network mapping `inputs` to `targets`, both min-max scaled on the training set.
pub fn train(
    cfg: &TrainConfig,
    output: OutputActivation,
    inputs: &[&[f64]],
    targets: &[&[f64]],
    val_inputs: &[&[f64]],
    val_targets: &[&[f64]],
) -> Result<(ScaledNet, TrainReport)> {
    if inputs.is_empty() || inputs.len() != targets.len() || val_inputs.len() != val_targets.len() {
        return Err(Error::InvalidConfig(format!(
            "training needs matching non-empty inputs and targets ({} vs {})",
            inputs.len(),
            targets.len()
        )));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || cfg.lr_final.is_some_and(|l| !(l > 0.0)) {
        return Err(Error::InvalidConfig("batch size and learning rate must be positive".into()));
    }
    let input = Normalizer::fit(inputs.iter().copied())?;
    let target = Normalizer::fit(targets.iter().copied())?;
    let xs: Vec<Vec<f64>> = inputs.iter().map(|x| input.transform(x)).collect();
    let ts: Vec<Vec<f64>> = targets.iter().map(|t| target.transform(t)).collect();
    let vx: Vec<Vec<f64>> = val_inputs.iter().map(|x| input.transform(x)).collect();
    let vt: Vec<Vec<f64>> = val_targets.iter().map(|t| target.transform(t)).collect();
    let vx_ref: Vec<&[f64]> = vx.iter().map(|v| v.as_slice()).collect();
    let vt_ref: Vec<&[f64]> = vt.iter().map(|v| v.as_slice()).collect();

    let mut widths = vec![input.width()];
    widths.extend(&cfg.hidden);
    widths.push(target.width());
    let mut net = Mlp::new(&widths, output, &mut rng::stream(cfg.seed, Purpose::WeightInit, 0))?;
    let mut adam = Adam::new(net.params.len());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut best = net.params.clone();
    let mut report = TrainReport { best_epoch: 0, best_val_mse: f64::INFINITY, val_mse: Vec::with_capacity(cfg.epochs) };

    for epoch in 0..cfg.epochs {
        let lr = learning_rate(cfg, epoch);
        order.shuffle(&mut rng::stream(cfg.seed, Purpose::Shuffle, epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i].as_slice()).collect();
            let bt: Vec<&[f64]> = chunk.iter().map(|&i| ts[i].as_slice()).collect();
            let (loss, grad) = net.loss_and_gradient(&bx, &bt);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            adam.step(&mut net.params, &grad, cfg, lr);
        }
        let val = if vx_ref.is_empty() {
            let all_x: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
            let all_t: Vec<&[f64]> = ts.iter().map(|v| v.as_slice()).collect();
            net.mse(&all_x, &all_t)
        } else {
            net.mse(&vx_ref, &vt_ref)
        };
        if !val.is_finite() {
            return Err(Error::Divergence { epoch, loss: val });
        }
        report.val_mse.push(val);
        if val < report.best_val_mse {
            report.best_val_mse = val;
            report.best_epoch = epoch;
            best.copy_from_slice(&net.params);
        }
    }
    net.params = best;
    Ok((ScaledNet { net, input, target }, report))
}
