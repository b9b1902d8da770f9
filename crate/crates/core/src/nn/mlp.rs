//! Fully-connected network with ReLU hidden layers, stored as one flat parameter vector.

use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Sigmoid,
    Linear,
}

/// Layer `l` maps `widths[l]` inputs to `widths[l + 1]` outputs; its weights
/// (row-major, output by input) are followed by its biases in `params`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub output: OutputActivation,
    pub params: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-layer pre-activations and activations of one forward pass.
pub(crate) struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub(crate) fn output(&self) -> &[f64] {
        self.acts.last().expect("at least the input layer")
    }
}

impl Mlp {
    pub fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform initialisation in `+-1/sqrt(fan_in)`, biases zero.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], output: OutputActivation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig(format!("invalid layer widths {widths:?}")));
        }
        let mut params = Vec::with_capacity(Self::param_count(widths));
        for w in widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            params.extend((0..w[0] * w[1]).map(|_| rng.sample(dist)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Ok(Self { widths: widths.to_vec(), output, params })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.widths.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    pub(crate) fn forward_trace(&self, x: &[f64]) -> Trace {
        let last = self.widths.len() - 2;
        let mut acts = vec![x.to_vec()];
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            let input = &acts[l];
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(input).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            if l < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            } else if self.output == OutputActivation::Sigmoid {
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            acts.push(z);
        }
        Trace { acts }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).acts.pop().expect("output layer")
    }

    /// Accumulate into `grad` the gradient of `sum((y - t)^2) * scale` for one sample.
    pub(crate) fn backward(&self, trace: &Trace, target: &[f64], scale: f64, grad: &mut [f64]) {
        let layers: Vec<_> = self.layers().collect();
        let n_layers = layers.len();
        let out = trace.output();
        let mut delta: Vec<f64> = out
            .iter()
            .zip(target)
            .map(|(y, t)| {
                let d = 2.0 * (y - t) * scale;
                match self.output {
                    OutputActivation::Sigmoid => d * y * (1.0 - y),
                    OutputActivation::Linear => d,
                }
            })
            .collect();
        for l in (0..n_layers).rev() {
            let (off, n_in, n_out) = layers[l];
            let input = &trace.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                row.iter_mut().zip(input).for_each(|(g, a)| *g += d * a);
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]).for_each(|(p, w)| *p += d * w);
                    }
                }
                // ReLU derivative: active units have positive output.
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Mean squared error over a batch and its gradient.
    pub fn loss_and_gradient(&self, inputs: &[&[f64]], targets: &[&[f64]]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / (inputs.len() * self.output_width()) as f64;
        let mut loss = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            let trace = self.forward_trace(x);
            loss += trace.output().iter().zip(t.iter()).map(|(y, t)| (y - t).powi(2)).sum::<f64>();
            self.backward(&trace, t, scale, &mut grad);
        }
        (loss * scale, grad)
    }

    pub fn mse(&self, inputs: &[&[f64]], targets: &[&[f64]]) -> f64 {
        let n = (inputs.len() * self.output_width()) as f64;
        inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| self.forward(x).iter().zip(t.iter()).map(|(y, t)| (y - t).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n
    }
}
