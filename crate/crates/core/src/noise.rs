//! Measurement covariance and noise sampling (Gaussian and dominant+fluctuating).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    Gaussian,
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// TDOA standard deviation (m).
    pub delta_d: f64,
    /// AOA standard deviation (rad).
    pub delta_a: f64,
    /// FDOA standard deviation as a fraction of `delta_d`.
    pub fdoa_factor: f64,
    pub mode: NoiseMode,
    /// Structured mode: fluctuating std relative to the dominant std.
    pub ratio: f64,
    /// Seed of the fixed dominant error pattern (structured mode).
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::from_rho(1.0)
    }
}

impl NoiseConfig {
    pub fn gaussian(delta_d: f64, delta_a: f64) -> Self {
        Self {
            delta_d,
            delta_a,
            fdoa_factor: 0.1,
            mode: NoiseMode::Gaussian,
            ratio: 0.1,
            seed: 0,
        }
    }

    pub fn structured(delta_d: f64, delta_a: f64, ratio: f64, seed: u64) -> Self {
        Self {
            mode: NoiseMode::Structured,
            ratio,
            seed,
            ..Self::gaussian(delta_d, delta_a)
        }
    }

    /// Gaussian noise scaled by `rho`; `rho = 1` is 0.22 m TDOA and 0.0175 rad AOA.
    pub fn from_rho(rho: f64) -> Self {
        Self::gaussian(0.22 * rho, 0.0175 * rho)
    }

    pub fn with_rho(self, rho: f64) -> Self {
        Self {
            delta_d: 0.22 * rho,
            delta_a: 0.0175 * rho,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.delta_d) || !ok(self.delta_a) || !ok(self.fdoa_factor) {
            return Err(Error::InvalidConfig(format!(
                "noise standard deviations must be positive (delta_d={}, delta_a={}, fdoa_factor={})",
                self.delta_d, self.delta_a, self.fdoa_factor
            )));
        }
        if self.mode == NoiseMode::Structured && !ok(self.ratio) {
            return Err(Error::InvalidConfig(format!(
                "structured noise ratio must be positive, got {}",
                self.ratio
            )));
        }
        Ok(())
    }

    /// Per-component standard deviations in measurement-vector order.
    pub fn sigmas(&self, n_a: usize) -> DVector<f64> {
        let mut s = DVector::zeros(4 * n_a - 2);
        for i in 0..n_a - 1 {
            s[2 * i] = self.delta_d;
            s[2 * i + 1] = self.fdoa_factor * self.delta_d;
        }
        let off = 2 * (n_a - 1);
        for j in 0..2 * n_a {
            s[off + j] = self.delta_a;
        }
        s
    }

    pub fn scatterer_sigmas(&self) -> DVector<f64> {
        DVector::from_vec(vec![
            self.delta_d,
            self.fdoa_factor * self.delta_d,
            self.delta_a,
            self.delta_a,
        ])
    }
}

/// Covariance of the UE measurement vector for `n_a` selected RRHs.
pub fn build_q(n_a: usize, cfg: &NoiseConfig) -> Result<DMatrix<f64>> {
    if n_a < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 RRHs, got {n_a}")));
    }
    cfg.validate()?;
    Ok(DMatrix::from_diagonal(&cfg.sigmas(n_a).map(|s| s * s)))
}

/// Covariance of one scatterer's 4-element measurement.
pub fn build_q_scatterer(cfg: &NoiseConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    Ok(DMatrix::from_diagonal(&cfg.scatterer_sigmas().map(|s| s * s)))
}

fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Wrap azimuth entries (every other entry of the angle block) into (-pi, pi].
pub fn wrap_azimuths(m: &mut DVector<f64>, n_a: usize) {
    let off = 2 * (n_a - 1);
    for j in 0..n_a {
        m[off + 2 * j] = wrap_angle(m[off + 2 * j]);
    }
}

fn n_a_of(len: usize) -> Result<usize> {
    if len < 6 || (len + 2) % 4 != 0 {
        return Err(Error::InvalidConfig(format!(
            "measurement length {len} is not 4*N_a-2 for any N_a >= 2"
        )));
    }
    Ok((len + 2) / 4)
}

/// `m_true + L z` with `L L^T = q`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    m_true: &DVector<f64>,
    q: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = m_true.len();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::dim("noise covariance", n, q.nrows()));
    }
    let chol = q
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("noise covariance"))?;
    let mut m = m_true + chol.l() * standard_normal(n, rng);
    if let Ok(n_a) = n_a_of(n) {
        wrap_azimuths(&mut m, n_a);
    }
    Ok(m)
}

/// Fixed dominant error for an environment: `sigma_dom` scaled by a standard
/// normal pattern that depends only on `cfg.seed` and the vector length.
pub fn dominant_bias(sigma_dom: &DVector<f64>, cfg: &NoiseConfig) -> DVector<f64> {
    let mut r = rng::stream(cfg.seed, Purpose::DominantBias, sigma_dom.len() as u64);
    standard_normal(sigma_dom.len(), &mut r).component_mul(sigma_dom)
}

/// `m_true + dominant_bias + eps` with `eps ~ N(0, (ratio * sigma_dom)^2)` per component.
pub fn sample_structured<R: Rng + ?Sized>(
    m_true: &DVector<f64>,
    sigma_dom: &DVector<f64>,
    ratio: f64,
    dominant_bias: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = m_true.len();
    if dominant_bias.len() != n {
        return Err(Error::dim("dominant bias", n, dominant_bias.len()));
    }
    if sigma_dom.len() != n {
        return Err(Error::dim("dominant std", n, sigma_dom.len()));
    }
    let fluct = standard_normal(n, rng).component_mul(sigma_dom) * ratio;
    let mut m = m_true + dominant_bias + fluct;
    if let Ok(n_a) = n_a_of(n) {
        wrap_azimuths(&mut m, n_a);
    }
    Ok(m)
}

/// Draws noisy UE measurement vectors for one noise configuration.
#[derive(Debug, Clone)]
pub struct Sampler {
    cfg: NoiseConfig,
    sigmas: DVector<f64>,
    bias: Option<DVector<f64>>,
}

impl Sampler {
    pub fn new(n_a: usize, cfg: &NoiseConfig) -> Result<Self> {
        build_q(n_a, cfg)?;
        let sigmas = cfg.sigmas(n_a);
        let bias = (cfg.mode == NoiseMode::Structured).then(|| dominant_bias(&sigmas, cfg));
        Ok(Self { cfg: *cfg, sigmas, bias })
    }

    pub fn for_scatterer(cfg: &NoiseConfig) -> Result<Self> {
        cfg.validate()?;
        let sigmas = cfg.scatterer_sigmas();
        let bias = (cfg.mode == NoiseMode::Structured).then(|| dominant_bias(&sigmas, cfg));
        Ok(Self { cfg: *cfg, sigmas, bias })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.sigmas.map(|s| s * s))
    }

    pub fn dominant_bias(&self) -> Option<&DVector<f64>> {
        self.bias.as_ref()
    }

    pub fn sample<R: Rng + ?Sized>(&self, m_true: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        if m_true.len() != self.sigmas.len() {
            return Err(Error::dim("measurement vector", self.sigmas.len(), m_true.len()));
        }
        let mut m = match &self.bias {
            None => m_true + standard_normal(m_true.len(), rng).component_mul(&self.sigmas),
            Some(b) => m_true + b + standard_normal(m_true.len(), rng).component_mul(&self.sigmas) * self.cfg.ratio,
        };
        match n_a_of(m.len()) {
            Ok(n_a) => wrap_azimuths(&mut m, n_a),
            Err(_) => m[2] = wrap_angle(m[2]),
        }
        Ok(m)
    }
}
