//! Closed-form weighted least-squares estimate of the UE position and velocity
//! from LOS TDOA/FDOA/AOA measurements.
//!
//! Measurement layout for `N_a` selected RRHs (the first is the reference):
//! `[r_21, rdot_21, ..., r_Na1, rdot_Na1, phi_1, theta_1, ..., phi_Na, theta_Na]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, angle_rates, angular_vectors, los_range, range_rate, UeState, Vec3};
use crate::linalg::{self, Weighting};

/// Fewest RRHs for which the velocity is identifiable.
pub const MIN_RRHS_FOR_VELOCITY: usize = 4;

pub fn measurement_len(n_a: usize) -> usize {
    4 * n_a - 2
}

pub(crate) fn tdoa_index(n: usize) -> usize {
    2 * (n - 1)
}

pub(crate) fn angle_index(n_a: usize, j: usize) -> usize {
    2 * (n_a - 1) + 2 * j
}

fn check_dims(m: &DVector<f64>, rrhs: &[Vec3]) -> Result<usize> {
    let n_a = rrhs.len();
    if n_a < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 RRHs, got {n_a}")));
    }
    if m.len() != measurement_len(n_a) {
        return Err(Error::dim("measurement vector", measurement_len(n_a), m.len()));
    }
    Ok(n_a)
}

/// Noise-free measurement vector of `x` at `rrhs` (reference first).
pub fn measurement_vector(x: &UeState, rrhs: &[Vec3]) -> Result<DVector<f64>> {
    let n_a = rrhs.len();
    if n_a < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 RRHs, got {n_a}")));
    }
    let mut m = DVector::zeros(measurement_len(n_a));
    for n in 1..n_a {
        let p = geometry::los_params(x, &rrhs[n], &rrhs[0])?;
        m[tdoa_index(n)] = p.r_n1;
        m[tdoa_index(n) + 1] = p.rdot_n1;
    }
    for (j, b) in rrhs.iter().enumerate() {
        let aoa = geometry::aoa_los(&x.position, b)?;
        m[angle_index(n_a, j)] = aoa.phi;
        m[angle_index(n_a, j) + 1] = aoa.theta;
    }
    Ok(m)
}

/// Pseudo-linear system `h = G x` with the measurements of `m` substituted.
pub fn build_system(m: &DVector<f64>, rrhs: &[Vec3]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n_a = check_dims(m, rrhs)?;
    let len = measurement_len(n_a);
    let mut h = DVector::zeros(len);
    let mut g = DMatrix::zeros(len, 6);
    let b1 = rrhs[0];
    let (a1, _, _) = angular_vectors(m[angle_index(n_a, 0)], m[angle_index(n_a, 0) + 1]);
    let a1b1 = a1.dot(&b1);
    for n in 1..n_a {
        let bn = rrhs[n];
        let i = tdoa_index(n);
        let r = m[i];
        let rdot = m[i + 1];
        h[i] = r * r - 2.0 * r * a1b1 - bn.dot(&bn) + b1.dot(&b1);
        h[i + 1] = rdot * r - rdot * a1b1;
        let row = (b1 - bn) - a1 * r;
        for k in 0..3 {
            g[(i, k)] = 2.0 * row[k];
            g[(i + 1, k)] = -rdot * a1[k];
            g[(i + 1, 3 + k)] = row[k];
        }
    }
    for (j, bj) in rrhs.iter().enumerate() {
        let i = angle_index(n_a, j);
        let (_, c, d) = angular_vectors(m[i], m[i + 1]);
        h[i] = c.dot(bj);
        h[i + 1] = d.dot(bj);
        for k in 0..3 {
            g[(i, k)] = c[k];
            g[(i + 1, k)] = d[k];
        }
    }
    Ok((h, g))
}

/// Residual `e = h(m) - G(m) x` of the pseudo-linear system.
pub fn residual(m: &DVector<f64>, rrhs: &[Vec3], x: &UeState) -> Result<DVector<f64>> {
    let (h, g) = build_system(m, rrhs)?;
    Ok(h - g * x.to_vector())
}

/// First-order map from measurement noise to the pseudo-linear residual,
/// `e ~ B dm`, evaluated at the state `x`.
pub fn build_b(x: &UeState, rrhs: &[Vec3]) -> Result<DMatrix<f64>> {
    let n_a = rrhs.len();
    if n_a < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 RRHs, got {n_a}")));
    }
    let len = measurement_len(n_a);
    let u = x.position;
    let r1 = los_range(&u, &rrhs[0]);
    let (phidot1, thetadot1) = angle_rates(&u, &x.velocity, &rrhs[0])?;
    let theta1 = geometry::aoa_los(&u, &rrhs[0])?.theta;
    let cos1 = theta1.cos();
    let mut b = DMatrix::zeros(len, len);
    for n in 1..n_a {
        let i = tdoa_index(n);
        let rn = los_range(&u, &rrhs[n]);
        let rdot_n = range_rate(&u, &x.velocity, &rrhs[n])?;
        let rn1 = rn - r1;
        b[(i, i)] = 2.0 * rn;
        b[(i + 1, i)] = rdot_n;
        b[(i + 1, i + 1)] = rn;
        let col = angle_index(n_a, 0);
        b[(i + 1, col)] = r1 * rn1 * phidot1 * cos1 * cos1;
        b[(i + 1, col + 1)] = r1 * rn1 * thetadot1;
    }
    for (j, bj) in rrhs.iter().enumerate() {
        let i = angle_index(n_a, j);
        let rj = los_range(&u, bj);
        let theta = geometry::aoa_los(&u, bj)?.theta;
        b[(i, i)] = rj * theta.cos();
        b[(i + 1, i + 1)] = rj;
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WlsConfig {
    /// Weighting-matrix refinements after the initial `W = Q^-1` solve.
    pub iters: usize,
    /// Stop early once the relative state change drops below this.
    pub tolerance: Option<f64>,
}

impl Default for WlsConfig {
    fn default() -> Self {
        Self { iters: 2, tolerance: None }
    }
}

#[derive(Debug, Clone)]
pub struct WlsEstimate {
    pub state: UeState,
    /// Linearized covariance at the estimate; velocity block is infinite when
    /// the velocity is not identifiable.
    pub covariance: DMatrix<f64>,
    pub velocity_reliable: bool,
    pub solves: usize,
}

/// Rows and state columns used for a given number of RRHs: with fewer than
/// four RRHs only the TDOA and AOA rows and the position columns are kept.
struct Reduction {
    rows: Vec<usize>,
    cols: usize,
}

impl Reduction {
    fn new(n_a: usize) -> Self {
        let len = measurement_len(n_a);
        if n_a >= MIN_RRHS_FOR_VELOCITY {
            return Self { rows: (0..len).collect(), cols: 6 };
        }
        let mut rows: Vec<usize> = (1..n_a).map(tdoa_index).collect();
        rows.extend(angle_index(n_a, 0)..len);
        Self { rows, cols: 3 }
    }

    fn system(&self, h: &DVector<f64>, g: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let h = DVector::from_iterator(self.rows.len(), self.rows.iter().map(|&r| h[r]));
        let g = DMatrix::from_fn(self.rows.len(), self.cols, |i, j| g[(self.rows[i], j)]);
        (h, g)
    }

    fn square(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.rows.len();
        DMatrix::from_fn(n, n, |i, j| a[(self.rows[i], self.rows[j])])
    }
}

fn state_from(x: &DVector<f64>, velocity: Vec3) -> UeState {
    if x.len() == 6 {
        UeState::from_slice(x.as_slice())
    } else {
        UeState::new(Vec3::new(x[0], x[1], x[2]), velocity)
    }
}

/// Minimum-norm velocity from the FDOA rows for a known position.
fn min_norm_velocity(h: &DVector<f64>, g: &DMatrix<f64>, n_a: usize, u: &Vec3) -> Result<Vec3> {
    let k = n_a - 1;
    let mut a = DMatrix::zeros(k, 3);
    let mut rhs = DVector::zeros(k);
    for n in 1..n_a {
        let i = tdoa_index(n) + 1;
        rhs[n - 1] = h[i] - (g[(i, 0)] * u.x + g[(i, 1)] * u.y + g[(i, 2)] * u.z);
        for c in 0..3 {
            a[(n - 1, c)] = g[(i, 3 + c)];
        }
    }
    let v = a
        .pseudo_inverse(1e-12)
        .map_err(|_| Error::NonFinite("velocity pseudo-inverse"))?
        * rhs;
    Ok(Vec3::new(v[0], v[1], v[2]))
}

/// Iteratively reweighted WLS: first `W = Q^-1`, then `W = (B Q B^T)^-1` with
/// `B` rebuilt at the latest estimate.
pub fn wls_solve(
    m: &DVector<f64>,
    rrhs: &[Vec3],
    q: &DMatrix<f64>,
    cfg: &WlsConfig,
) -> Result<WlsEstimate> {
    let n_a = check_dims(m, rrhs)?;
    if q.nrows() != m.len() || q.ncols() != m.len() {
        return Err(Error::dim("noise covariance", m.len(), q.nrows()));
    }
    let red = Reduction::new(n_a);
    let (h_full, g_full) = build_system(m, rrhs)?;
    let (h, g) = red.system(&h_full, &g_full);
    let q_red = red.square(q);

    let solve = |cov: &DMatrix<f64>| -> Result<(DVector<f64>, UeState)> {
        let x = linalg::weighted_least_squares(&h, &g, Weighting::InverseOf(cov))?;
        let mut state = state_from(&x, Vec3::zeros());
        if red.cols == 3 {
            state.velocity = min_norm_velocity(&h_full, &g_full, n_a, &state.position)?;
        }
        if !state.is_finite() {
            return Err(Error::NonFinite("WLS estimate"));
        }
        Ok((x, state))
    };

    let (mut x, mut state) = solve(&q_red)?;
    let mut solves = 1;
    for _ in 0..cfg.iters {
        let b = red.square(&build_b(&state, rrhs)?);
        let cov = &b * &q_red * b.transpose();
        let (x_new, state_new) = solve(&cov)?;
        solves += 1;
        let change = (&x_new - &x).norm();
        x = x_new;
        state = state_new;
        if let Some(tol) = cfg.tolerance {
            if change < tol * x.norm().max(1.0) {
                break;
            }
        }
    }

    let covariance = if red.cols == 6 {
        linearized_covariance(&state, rrhs, q)?
    } else {
        let m0 = measurement_vector(&state, rrhs)?;
        let (h0, g0) = build_system(&m0, rrhs)?;
        let (_, g) = red.system(&h0, &g0);
        let b = red.square(&build_b(&state, rrhs)?);
        let pos = reduced_covariance(&g, &b, &q_red)?;
        let mut c = DMatrix::zeros(6, 6);
        c.view_mut((0, 0), (3, 3)).copy_from(&pos);
        for k in 3..6 {
            c[(k, k)] = f64::INFINITY;
        }
        c
    };
    Ok(WlsEstimate {
        state,
        covariance,
        velocity_reliable: red.cols == 6,
        solves,
    })
}

fn reduced_covariance(g: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let cov = b * q * b.transpose();
    let (normal, _) = linalg::weighted_normal_equations(
        &DVector::zeros(g.nrows()),
        g,
        Weighting::InverseOf(&cov),
    )?;
    linalg::spd_inverse(&normal)
}

/// `((B^-1 G)^T Q^-1 B^-1 G)^-1` with `G` and `B` evaluated noise-free at `x`.
pub fn linearized_covariance(x: &UeState, rrhs: &[Vec3], q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m0 = measurement_vector(x, rrhs)?;
    let (_, g) = build_system(&m0, rrhs)?;
    let b = build_b(x, rrhs)?;
    reduced_covariance(&g, &b, q)
}
