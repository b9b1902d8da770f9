//! Cramér-Rao lower bounds for the UE and scatterer states, and the algebraic
//! identities that make the WLS covariance coincide with the bound.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};
use crate::geometry::{self, angle_rates, angular_vectors, los_range, range_rate, ScattererState, UeState, Vec3};
use crate::linalg::{self, MAX_CONDITION};
use crate::ue_wls::{angle_index, measurement_len, tdoa_index};

/// A 6x6 (UE) or 4x4 (scatterer) bound with position in the leading three rows.
#[derive(Debug, Clone)]
pub struct Crlb {
    pub matrix: DMatrix<f64>,
}

impl Crlb {
    pub fn position_trace(&self) -> f64 {
        (0..3).map(|i| self.matrix[(i, i)]).sum()
    }

    /// Velocity block trace (UE) or speed variance (scatterer).
    pub fn velocity_trace(&self) -> f64 {
        (3..self.matrix.nrows()).map(|i| self.matrix[(i, i)]).sum()
    }
}

fn row(d: &mut DMatrix<f64>, i: usize, offset: usize, v: &Vec3) {
    for k in 0..3 {
        d[(i, offset + k)] = v[k];
    }
}

/// `dm/dx^T` for the UE measurement vector, rows in measurement order.
pub fn jacobian_ue(x: &UeState, rrhs: &[Vec3]) -> Result<DMatrix<f64>> {
    let n_a = rrhs.len();
    if n_a < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 RRHs, got {n_a}")));
    }
    let u = x.position;
    let ud = x.velocity;
    let mut d = DMatrix::zeros(measurement_len(n_a), 6);
    let r1 = los_range(&u, &rrhs[0]);
    let rd1 = range_rate(&u, &ud, &rrhs[0])?;
    let w1 = u - rrhs[0];
    for n in 1..n_a {
        let i = tdoa_index(n);
        let ri = los_range(&u, &rrhs[n]);
        let rdi = range_rate(&u, &ud, &rrhs[n])?;
        let wi = u - rrhs[n];
        let dr = wi / ri - w1 / r1;
        row(&mut d, i, 0, &dr);
        let drd = w1 * (rd1 / (r1 * r1)) - wi * (rdi / (ri * ri)) + ud / ri - ud / r1;
        row(&mut d, i + 1, 0, &drd);
        row(&mut d, i + 1, 3, &dr);
    }
    for (j, bj) in rrhs.iter().enumerate() {
        let i = angle_index(n_a, j);
        let rj = los_range(&u, bj);
        let aoa = geometry::aoa_los(&u, bj)?;
        if aoa.is_vertical() {
            return Err(Error::Gimbal);
        }
        let (_, c, dv) = angular_vectors(aoa.phi, aoa.theta);
        row(&mut d, i, 0, &(c / (rj * aoa.theta.cos())));
        row(&mut d, i + 1, 0, &(dv / rj));
    }
    Ok(d)
}

/// Inverse of a covariance made of 2x2 diagonal blocks, block by block.
pub fn block_inverse(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = q.nrows();
    if n % 2 != 0 || q.ncols() != n {
        return Err(Error::dim("block covariance", n + n % 2, n));
    }
    let mut out = DMatrix::zeros(n, n);
    for b in (0..n).step_by(2) {
        for i in 0..n {
            for k in [b, b + 1] {
                if i / 2 != b / 2 && q[(i, k)] != 0.0 {
                    return linalg::spd_inverse(q);
                }
            }
        }
        let block = Matrix2::new(q[(b, b)], q[(b, b + 1)], q[(b + 1, b)], q[(b + 1, b + 1)]);
        if block.determinant() <= 0.0 || block[(0, 0)] <= 0.0 {
            return Err(Error::NotPositiveDefinite("noise covariance block"));
        }
        let inv = block.try_inverse().ok_or(Error::NotPositiveDefinite("noise covariance block"))?;
        out.view_mut((b, b), (2, 2)).copy_from(&inv);
    }
    Ok(out)
}

/// `(D^T Q^-1 D)^-1`.
pub fn crlb_from_jacobian(d: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<Crlb> {
    if q.nrows() != d.nrows() {
        return Err(Error::dim("noise covariance", d.nrows(), q.nrows()));
    }
    let qi = block_inverse(q)?;
    let fisher = linalg::symmetrize(d.transpose() * qi * d);
    let condition = linalg::equilibrated_condition(&fisher);
    if condition > MAX_CONDITION {
        return Err(Error::SingularInformation { condition });
    }
    let matrix = linalg::spd_inverse(&fisher).map_err(|_| Error::SingularInformation { condition })?;
    Ok(Crlb { matrix })
}

pub fn crlb_ue(x: &UeState, rrhs: &[Vec3], q: &DMatrix<f64>) -> Result<Crlb> {
    crlb_from_jacobian(&jacobian_ue(x, rrhs)?, q)
}

/// `dm^s/d[s; sdot]^T` for one scatterer seen by `b_n`, with the UE state known
/// and `b_ref` the reference RRH.
pub fn jacobian_scatterer(xs: &ScattererState, b_n: &Vec3, ue: &UeState) -> Result<DMatrix<f64>> {
    let speed = ue.velocity.norm();
    if speed == 0.0 {
        return Err(Error::DegenerateGeometry("UE velocity is zero; scatterer direction undefined".into()));
    }
    let nv = ue.velocity / speed;
    let s = xs.position;
    let w = ue.position - s;
    let p = s - b_n;
    let d2 = w.norm();
    let d1 = p.norm();
    if d1 < 1e-12 || d2 < 1e-12 {
        return Err(Error::DegenerateGeometry("scatterer coincides with UE or RRH".into()));
    }
    let vrel = ue.velocity - nv * xs.speed;
    let mut d = DMatrix::zeros(4, 4);
    row(&mut d, 0, 0, &(-w / d2 + p / d1));
    let drate = -vrel / d2 + w * (vrel.dot(&w) / d2.powi(3)) + nv * (xs.speed / d1)
        - p * (xs.speed * nv.dot(&p) / d1.powi(3));
    row(&mut d, 1, 0, &drate);
    d[(1, 3)] = -nv.dot(&w) / d2 + nv.dot(&p) / d1;
    let aoa = geometry::aoa_los(&s, b_n)?;
    if aoa.is_vertical() {
        return Err(Error::Gimbal);
    }
    let (_, c, dv) = angular_vectors(aoa.phi, aoa.theta);
    row(&mut d, 2, 0, &(c / (d1 * aoa.theta.cos())));
    row(&mut d, 3, 0, &(dv / d1));
    Ok(d)
}

pub fn crlb_scatterer(xs: &ScattererState, b_n: &Vec3, ue: &UeState, qs: &DMatrix<f64>) -> Result<Crlb> {
    crlb_from_jacobian(&jacobian_scatterer(xs, b_n, ue)?, qs)
}

/// Largest relative deviation between the two sides of each identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityReport {
    pub range_identity: f64,
    pub rate_identity: f64,
}

impl IdentityReport {
    pub fn max_deviation(&self) -> f64 {
        self.range_identity.max(self.rate_identity)
    }
}

fn rel_dev(lhs: &Vec3, rhs: &Vec3) -> f64 {
    let scale = lhs.amax().max(rhs.amax()).max(1e-300);
    (lhs - rhs).amax() / scale
}

/// Evaluate both sides of the range and rate identities linking the pseudo-linear
/// rows to the measurement Jacobian, for every non-reference RRH.
pub fn verify_identities(x: &UeState, rrhs: &[Vec3]) -> Result<IdentityReport> {
    let u = x.position;
    let ud = x.velocity;
    let b1 = rrhs[0];
    let r1 = los_range(&u, &b1);
    let rd1 = range_rate(&u, &ud, &b1)?;
    let aoa1 = geometry::aoa_los(&u, &b1)?;
    let (a1, c1, d1) = angular_vectors(aoa1.phi, aoa1.theta);
    let (phid1, thetad1) = angle_rates(&u, &ud, &b1)?;
    let w1 = u - b1;
    let mut report = IdentityReport { range_identity: 0.0, rate_identity: 0.0 };
    for bi in &rrhs[1..] {
        let ri = los_range(&u, bi);
        let rdi = range_rate(&u, &ud, bi)?;
        let wi = u - bi;
        let ri1 = ri - r1;
        let rdi1 = rdi - rd1;
        let bracket = wi / ri - w1 / r1;
        let lhs_a = bracket * ri;
        let rhs_a = (b1 - bi) - a1 * ri1;
        let lhs_b = bracket * rdi
            + (w1 * (rd1 / (r1 * r1)) - wi * (rdi / (ri * ri)) + ud / ri - ud / r1) * ri
            + c1 * (ri1 * phid1 * aoa1.theta.cos())
            + d1 * (ri1 * thetad1);
        let rhs_b = -a1 * rdi1;
        report.range_identity = report.range_identity.max(rel_dev(&lhs_a, &rhs_a));
        report.rate_identity = report.rate_identity.max(rel_dev(&lhs_b, &rhs_b));
    }
    Ok(report)
}

/// Diagonal noise covariance helper for tests and callers with per-entry stds.
pub fn diagonal_covariance(sigmas: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&sigmas.map(|s| s * s))
}
