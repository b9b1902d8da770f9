//! Weighted least-squares estimate of a scatterer's position and signed speed
//! from one NLOS path, given an estimate of the UE state.
//!
//! Measurement layout: `[rs_n1, rsdot_n1, phi_s, theta_s]`, differenced against
//! the LOS path to the reference RRH `b_ref`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{self, angular_vectors, los_range, range_rate, ScattererState, UeState, Vec3};
use crate::linalg::{self, Weighting};
use crate::ue_wls::WlsConfig;

/// Unit direction of the UE velocity, along which scatterers move.
pub fn travel_direction(ue: &UeState) -> Result<Vec3> {
    let speed = ue.velocity.norm();
    if !(speed > 0.0) {
        return Err(Error::DegenerateGeometry(
            "UE velocity is zero; scatterer direction undefined".into(),
        ));
    }
    Ok(ue.velocity / speed)
}

/// `T` mapping `[s; sdot]` to `[s; sdot * n_v]`.
pub fn transform(n_v: &Vec3) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(6, 4);
    for k in 0..3 {
        t[(k, k)] = 1.0;
        t[(3 + k, 3)] = n_v[k];
    }
    t
}

/// Noise-free measurement of scatterer `xs` on the path to `b_n`.
pub fn scatterer_measurement(
    xs: &ScattererState,
    b_n: &Vec3,
    b_ref: &Vec3,
    ue: &UeState,
) -> Result<DVector<f64>> {
    let n_v = travel_direction(ue)?;
    let p = geometry::nlos_params(ue, &xs.position, &xs.velocity(&n_v), b_n, b_ref)?;
    Ok(DVector::from_vec(vec![p.rs_n1l, p.rsdot_n1l, p.phi_s, p.theta_s]))
}

fn check_len(ms: &DVector<f64>) -> Result<()> {
    if ms.len() != 4 {
        return Err(Error::dim("scatterer measurement", 4, ms.len()));
    }
    Ok(())
}

/// Pseudo-linear system `h = G T [s; sdot]` with the measurement substituted
/// and the reference range and rate taken from the UE estimate.
pub fn build_scatterer_system(
    ms: &DVector<f64>,
    b_n: &Vec3,
    b_ref: &Vec3,
    ue: &UeState,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    check_len(ms)?;
    let n_v = travel_direction(ue)?;
    let u = ue.position;
    let ud = ue.velocity;
    let rs = ms[0] + los_range(&u, b_ref);
    let rsd = ms[1] + range_rate(&u, &ud, b_ref)?;
    if !(rs > 0.0) {
        return Err(Error::DegenerateGeometry(format!("non-positive path length {rs}")));
    }
    let (a, c, d) = angular_vectors(ms[2], ms[3]);
    let abn = a.dot(b_n);
    let h = DVector::from_vec(vec![
        rs * rs + 2.0 * rs * abn - u.dot(&u) + b_n.dot(b_n),
        rs * rsd + rsd * abn - ud.dot(&u),
        c.dot(b_n),
        d.dot(b_n),
    ]);
    let mut g = DMatrix::zeros(4, 6);
    let lever = a * rs + b_n - u;
    let rate = a * rsd - ud;
    for k in 0..3 {
        g[(0, k)] = 2.0 * lever[k];
        g[(1, k)] = rate[k];
        g[(1, 3 + k)] = lever[k];
        g[(2, k)] = c[k];
        g[(3, k)] = d[k];
    }
    Ok((h, g, transform(&n_v)))
}

pub fn scatterer_residual(
    ms: &DVector<f64>,
    b_n: &Vec3,
    b_ref: &Vec3,
    ue: &UeState,
    xs: &ScattererState,
) -> Result<DVector<f64>> {
    let (h, g, t) = build_scatterer_system(ms, b_n, b_ref, ue)?;
    Ok(h - g * t * xs.to_vector())
}

/// First-order map from scatterer measurement noise to the residual, at `xs`.
pub fn build_bs(xs: &ScattererState, b_n: &Vec3, ue: &UeState) -> Result<DMatrix<f64>> {
    let s = xs.position;
    let sd = if xs.speed == 0.0 { Vec3::zeros() } else { xs.velocity(&travel_direction(ue)?) };
    let d1 = los_range(&s, b_n);
    let d2 = los_range(&ue.position, &s);
    if d1 < 1e-12 || d2 < 1e-12 {
        return Err(Error::DegenerateGeometry("scatterer coincides with UE or RRH".into()));
    }
    let aoa = geometry::aoa_los(&s, b_n)?;
    if aoa.is_vertical() {
        return Err(Error::Gimbal);
    }
    let (a, c, d) = angular_vectors(aoa.phi, aoa.theta);
    let cos = aoa.theta.cos();
    let rs = d1 + d2;
    let rsd = (ue.velocity - sd).dot(&(ue.position - s)) / d2 + sd.dot(&a);
    let phidot = c.dot(&sd) / (d1 * cos);
    let thetadot = d.dot(&sd) / d1;
    let mut b = DMatrix::zeros(4, 4);
    b[(0, 0)] = 2.0 * d2;
    b[(1, 0)] = rsd - a.dot(&sd);
    b[(1, 1)] = d2;
    b[(1, 2)] = -rs * d1 * phidot * cos * cos;
    b[(1, 3)] = -rs * d1 * thetadot;
    b[(2, 2)] = d1 * cos;
    b[(3, 3)] = d1;
    Ok(b)
}

#[derive(Debug, Clone)]
pub struct ScattererEstimate {
    pub state: ScattererState,
    pub covariance: DMatrix<f64>,
}

fn to_state(x: &DVector<f64>) -> ScattererState {
    ScattererState {
        position: Vec3::new(x[0], x[1], x[2]),
        speed: x[3],
    }
}

pub fn scatterer_wls_solve(
    ms: &DVector<f64>,
    b_n: &Vec3,
    b_ref: &Vec3,
    ue: &UeState,
    qs: &DMatrix<f64>,
    cfg: &WlsConfig,
) -> Result<ScattererEstimate> {
    if qs.shape() != (4, 4) {
        return Err(Error::dim("scatterer covariance", 4, qs.nrows()));
    }
    let (h, g, t) = build_scatterer_system(ms, b_n, b_ref, ue)?;
    let gt = g * t;
    let solve = |cov: &DMatrix<f64>| -> Result<DVector<f64>> {
        let x = linalg::weighted_least_squares(&h, &gt, Weighting::InverseOf(cov))?;
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(Error::NonFinite("scatterer estimate"))
        }
    };
    let mut x = solve(qs)?;
    for _ in 0..cfg.iters {
        let b = build_bs(&to_state(&x), b_n, ue)?;
        let x_new = solve(&(&b * qs * b.transpose()))?;
        let change = (&x_new - &x).norm();
        x = x_new;
        if let Some(tol) = cfg.tolerance {
            if change < tol * x.norm().max(1.0) {
                break;
            }
        }
    }
    let state = to_state(&x);
    let covariance = scatterer_linearized_covariance(&state, b_n, b_ref, ue, qs)?;
    Ok(ScattererEstimate { state, covariance })
}

/// `((B^-1 G T)^T Q^-1 B^-1 G T)^-1` evaluated noise-free at `xs`.
pub fn scatterer_linearized_covariance(
    xs: &ScattererState,
    b_n: &Vec3,
    b_ref: &Vec3,
    ue: &UeState,
    qs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let m0 = scatterer_measurement(xs, b_n, b_ref, ue)?;
    let (_, g, t) = build_scatterer_system(&m0, b_n, b_ref, ue)?;
    let b = build_bs(xs, b_n, ue)?;
    let cov = &b * qs * b.transpose();
    let (normal, _) =
        linalg::weighted_normal_equations(&DVector::zeros(4), &(g * t), Weighting::InverseOf(&cov))?;
    linalg::spd_inverse(&normal)
}
