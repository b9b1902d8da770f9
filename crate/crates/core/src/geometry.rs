//! Noise-free forward model: UE and scatterer states to TDOA/FDOA/AOA parameters.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Below this, two points are treated as coincident.
const MIN_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeState {
    pub position: Vec3,
    pub velocity: Vec3,
}

impl UeState {
    pub fn new(position: Vec3, velocity: Vec3) -> Self {
        Self { position, velocity }
    }

    /// Stacked `[u; u_dot]`.
    pub fn to_vector(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(
            6,
            self.position.iter().chain(self.velocity.iter()).copied(),
        )
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            position: Vec3::new(x[0], x[1], x[2]),
            velocity: Vec3::new(x[3], x[4], x[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite())
    }
}

/// Scatterer position and signed speed along the UE's direction of travel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScattererState {
    pub position: Vec3,
    pub speed: f64,
}

impl ScattererState {
    pub fn velocity(&self, direction: &Vec3) -> Vec3 {
        direction * self.speed
    }

    pub fn to_vector(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_vec(vec![
            self.position.x,
            self.position.y,
            self.position.z,
            self.speed,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aoa {
    pub phi: f64,
    pub theta: f64,
}

impl Aoa {
    /// Elevation at +/-90 degrees, where azimuth is set to 0 by convention.
    pub fn is_vertical(&self) -> bool {
        (self.theta.abs() - PI / 2.0).abs() < 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosParams {
    pub r_n1: f64,
    pub rdot_n1: f64,
    pub phi: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlosParams {
    pub rs_n1l: f64,
    pub rsdot_n1l: f64,
    pub phi_s: f64,
    pub theta_s: f64,
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

fn unit_from(u: &Vec3, b: &Vec3) -> Result<(Vec3, f64)> {
    let diff = u - b;
    let r = diff.norm();
    if r < MIN_DISTANCE {
        return Err(Error::DegenerateGeometry(format!(
            "point coincides with receiver at [{}, {}, {}]",
            b.x, b.y, b.z
        )));
    }
    Ok((diff / r, r))
}

pub fn los_range(u: &Vec3, b: &Vec3) -> f64 {
    (u - b).norm()
}

pub fn tdoa_related(u: &Vec3, b_n: &Vec3, b_1: &Vec3) -> f64 {
    los_range(u, b_n) - los_range(u, b_1)
}

/// Projection of `udot` on the unit vector from `b` to `u`.
pub fn range_rate(u: &Vec3, udot: &Vec3, b: &Vec3) -> Result<f64> {
    let (unit, _) = unit_from(u, b)?;
    Ok(udot.dot(&unit))
}

pub fn fdoa_related(u: &Vec3, udot: &Vec3, b_n: &Vec3, b_1: &Vec3) -> Result<f64> {
    Ok(range_rate(u, udot, b_n)? - range_rate(u, udot, b_1)?)
}

/// Azimuth and elevation of `u` seen from `b`.
pub fn aoa_los(u: &Vec3, b: &Vec3) -> Result<Aoa> {
    let (unit, _) = unit_from(u, b)?;
    let theta = unit.z.clamp(-1.0, 1.0).asin();
    let horizontal = unit.x.hypot(unit.y);
    let phi = if horizontal < 1e-15 {
        0.0
    } else {
        wrap_angle(unit.y.atan2(unit.x))
    };
    Ok(Aoa { phi, theta })
}

pub fn los_params(ue: &UeState, b_n: &Vec3, b_1: &Vec3) -> Result<LosParams> {
    let aoa = aoa_los(&ue.position, b_n)?;
    Ok(LosParams {
        r_n1: tdoa_related(&ue.position, b_n, b_1),
        rdot_n1: fdoa_related(&ue.position, &ue.velocity, b_n, b_1)?,
        phi: aoa.phi,
        theta: aoa.theta,
    })
}

/// Parameters of the single-bounce path UE -> scatterer `s` -> RRH `b_n`,
/// differenced against the LOS path to the reference RRH `b_1`.
pub fn nlos_params(
    ue: &UeState,
    s: &Vec3,
    sdot: &Vec3,
    b_n: &Vec3,
    b_1: &Vec3,
) -> Result<NlosParams> {
    let (to_ue, d2) = unit_from(&ue.position, s)?;
    let (from_rrh, d1) = unit_from(s, b_n)?;
    let r1 = los_range(&ue.position, b_1);
    let rdot1 = range_rate(&ue.position, &ue.velocity, b_1)?;
    let path_rate = (ue.velocity - sdot).dot(&to_ue) + sdot.dot(&from_rrh);
    let aoa = aoa_los(s, b_n)?;
    Ok(NlosParams {
        rs_n1l: d2 + d1 - r1,
        rsdot_n1l: path_rate - rdot1,
        phi_s: aoa.phi,
        theta_s: aoa.theta,
    })
}

/// Unit direction `a` and the two orthogonal frame vectors `c`, `d`.
pub fn angular_vectors(phi: f64, theta: f64) -> (Vec3, Vec3, Vec3) {
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    (
        Vec3::new(ct * cp, ct * sp, st),
        Vec3::new(-sp, cp, 0.0),
        Vec3::new(-st * cp, -st * sp, ct),
    )
}

/// Time derivatives of azimuth and elevation of `u` seen from `b` when `u` moves with `udot`.
pub fn angle_rates(u: &Vec3, udot: &Vec3, b: &Vec3) -> Result<(f64, f64)> {
    let r = los_range(u, b);
    let aoa = aoa_los(u, b)?;
    let cos_theta = aoa.theta.cos();
    if aoa.is_vertical() || cos_theta.abs() < 1e-12 {
        return Err(Error::Gimbal);
    }
    let (_, c, d) = angular_vectors(aoa.phi, aoa.theta);
    Ok((c.dot(udot) / (r * cos_theta), d.dot(udot) / r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table_ue() -> UeState {
        UeState::new(Vec3::new(250.0, 450.0, 0.0), Vec3::new(-10.0, 2.0, 5.0))
    }
    fn rrh1() -> Vec3 {
        Vec3::new(235.5042, 389.5038, 26.0)
    }
    fn rrh2() -> Vec3 {
        Vec3::new(287.5042, 389.5038, 32.0)
    }

    #[test]
    fn los_range_examples() {
        let b = rrh1();
        assert_eq!(los_range(&b, &b), 0.0);
        let expect = (14.4958f64.powi(2) + 60.4962f64.powi(2) + 26.0f64.powi(2)).sqrt();
        assert!((los_range(&table_ue().position, &b) - expect).abs() < 1e-12);
        assert!((expect - 67.42).abs() < 0.01);
        assert_eq!(los_range(&Vec3::x(), &Vec3::zeros()), 1.0);
    }

    #[test]
    fn tdoa_zero_cases() {
        let u = table_ue().position;
        assert_eq!(tdoa_related(&u, &rrh1(), &rrh1()), 0.0);
        let b1 = Vec3::new(-1.0, 0.0, 0.0);
        let b2 = Vec3::new(1.0, 0.0, 0.0);
        assert!(tdoa_related(&Vec3::new(0.0, 5.0, 3.0), &b2, &b1).abs() < 1e-15);
    }

    #[test]
    fn range_rate_matches_time_difference() {
        let ue = table_ue();
        let b = rrh2();
        let dt = 1e-6;
        let fd = (los_range(&(ue.position + ue.velocity * dt), &b)
            - los_range(&(ue.position - ue.velocity * dt), &b))
            / (2.0 * dt);
        let rate = range_rate(&ue.position, &ue.velocity, &b).unwrap();
        assert!((fd - rate).abs() < 1e-6 * rate.abs().max(1.0));
    }

    #[test]
    fn range_rate_special_directions() {
        let b = Vec3::zeros();
        let u = Vec3::new(3.0, 0.0, 0.0);
        assert!(range_rate(&u, &Vec3::new(0.0, 2.0, 1.0), &b).unwrap().abs() < 1e-15);
        assert!((range_rate(&u, &Vec3::new(4.0, 0.0, 0.0), &b).unwrap() - 4.0).abs() < 1e-15);
        assert!(matches!(range_rate(&b, &u, &b), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn fdoa_matches_time_difference_of_tdoa() {
        let ue = table_ue();
        let dt = 1e-6;
        let fd = (tdoa_related(&(ue.position + ue.velocity * dt), &rrh2(), &rrh1())
            - tdoa_related(&(ue.position - ue.velocity * dt), &rrh2(), &rrh1()))
            / (2.0 * dt);
        let f = fdoa_related(&ue.position, &ue.velocity, &rrh2(), &rrh1()).unwrap();
        assert!((fd - f).abs() < 1e-6);
        assert_eq!(fdoa_related(&ue.position, &Vec3::zeros(), &rrh2(), &rrh1()).unwrap(), 0.0);
        assert_eq!(fdoa_related(&ue.position, &ue.velocity, &rrh1(), &rrh1()).unwrap(), 0.0);
    }

    #[test]
    fn aoa_examples() {
        let b = Vec3::zeros();
        let a = aoa_los(&Vec3::x(), &b).unwrap();
        assert_eq!((a.phi, a.theta), (0.0, 0.0));
        let z = aoa_los(&Vec3::new(0.0, 0.0, 5.0), &b).unwrap();
        assert_eq!(z.phi, 0.0);
        assert!((z.theta - PI / 2.0).abs() < 1e-15);
        assert!(z.is_vertical());
        let q = aoa_los(&Vec3::new(1.0, 1.0, 2f64.sqrt()), &b).unwrap();
        assert!((q.phi - PI / 4.0).abs() < 1e-14);
        assert!((q.theta - PI / 4.0).abs() < 1e-14);
        let back = aoa_los(&Vec3::new(-1.0, -1e-20, 0.0), &b).unwrap();
        assert!(back.phi > -PI && back.phi <= PI);
    }

    #[test]
    fn angular_vector_examples() {
        let (a, c, d) = angular_vectors(0.0, 0.0);
        assert_eq!(a, Vec3::x());
        assert_eq!(c, Vec3::y());
        assert_eq!(d, Vec3::z());
        let (a, _, _) = angular_vectors(PI / 2.0, 0.0);
        assert!((a - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn nlos_on_los_segment_equals_tdoa() {
        let ue = UeState::new(table_ue().position, Vec3::zeros());
        let b_n = rrh2();
        let s = ue.position * 0.3 + b_n * 0.7;
        let p = nlos_params(&ue, &s, &Vec3::zeros(), &b_n, &rrh1()).unwrap();
        assert!((p.rs_n1l - tdoa_related(&ue.position, &b_n, &rrh1())).abs() < 1e-10);
        assert_eq!(p.rsdot_n1l, 0.0);
    }

    #[test]
    fn nlos_rate_matches_path_length_derivative() {
        let ue = table_ue();
        let s = Vec3::new(240.0, 600.0, -19.0);
        let sdot = ue.velocity.normalize() * 5.0;
        let b_n = Vec3::new(235.5042, 589.5038, 14.0);
        let b_1 = rrh1();
        let path = |t: f64| {
            let u = ue.position + ue.velocity * t;
            let st = s + sdot * t;
            los_range(&u, &st) + los_range(&st, &b_n) - los_range(&u, &b_1)
        };
        let dt = 1e-6;
        let fd = (path(dt) - path(-dt)) / (2.0 * dt);
        let p = nlos_params(&ue, &s, &sdot, &b_n, &b_1).unwrap();
        assert!((fd - p.rsdot_n1l).abs() < 1e-6);
        assert!(p.rs_n1l + los_range(&ue.position, &b_1) >= los_range(&ue.position, &b_n));
    }

    #[test]
    fn angle_rate_examples() {
        let b = Vec3::zeros();
        let u = Vec3::new(0.0, 7.0, 0.0);
        assert_eq!(angle_rates(&u, &Vec3::zeros(), &b).unwrap(), (0.0, 0.0));
        let (pd, td) = angle_rates(&u, &Vec3::new(-3.0, 0.0, 0.0), &b).unwrap();
        assert!((pd - 3.0 / 7.0).abs() < 1e-15);
        assert!(td.abs() < 1e-15);
        assert!(matches!(
            angle_rates(&Vec3::new(0.0, 0.0, 2.0), &Vec3::x(), &b),
            Err(Error::Gimbal)
        ));
    }

    #[test]
    fn angle_rates_match_finite_differences() {
        let ue = table_ue();
        let b = rrh2();
        let dt = 1e-6;
        let at = |t: f64| aoa_los(&(ue.position + ue.velocity * t), &b).unwrap();
        let (p1, p0) = (at(dt), at(-dt));
        let fd_phi = (p1.phi - p0.phi) / (2.0 * dt);
        let fd_theta = (p1.theta - p0.theta) / (2.0 * dt);
        let (pd, td) = angle_rates(&ue.position, &ue.velocity, &b).unwrap();
        assert!((fd_phi - pd).abs() < 1e-4 * pd.abs());
        assert!((fd_theta - td).abs() < 1e-4 * td.abs());
    }

    fn point() -> impl Strategy<Value = Vec3> {
        (-500.0..500.0f64, -500.0..500.0f64, -50.0..50.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn reconstruction_identity(u in point(), b in point()) {
            prop_assume!((u - b).norm() > 1e-3);
            let aoa = aoa_los(&u, &b).unwrap();
            let (a, _, _) = angular_vectors(aoa.phi, aoa.theta);
            let back = b + a * los_range(&u, &b);
            prop_assert!((back - u).norm() <= 1e-9 * u.norm().max(1.0));
            prop_assert!(aoa.phi > -PI && aoa.phi <= PI);
        }

        #[test]
        fn tdoa_and_fdoa_antisymmetric(u in point(), v in point(), b1 in point(), b2 in point()) {
            prop_assume!((u - b1).norm() > 1e-3 && (u - b2).norm() > 1e-3);
            prop_assert_eq!(tdoa_related(&u, &b1, &b2), -tdoa_related(&u, &b2, &b1));
            let f12 = fdoa_related(&u, &v, &b1, &b2).unwrap();
            let f21 = fdoa_related(&u, &v, &b2, &b1).unwrap();
            prop_assert_eq!(f12, -f21);
        }

        #[test]
        fn frame_is_orthonormal(phi in -PI..PI, theta in -PI / 2.0..PI / 2.0) {
            let (a, c, d) = angular_vectors(phi, theta);
            prop_assert!((a.norm() - 1.0).abs() < 1e-12);
            prop_assert!((c.norm() - 1.0).abs() < 1e-12);
            prop_assert!((d.norm() - 1.0).abs() < 1e-12);
            prop_assert!(a.dot(&c).abs() < 1e-12 && a.dot(&d).abs() < 1e-12 && c.dot(&d).abs() < 1e-12);
        }

        #[test]
        fn range_rate_bounded_by_speed(u in point(), v in point(), b in point()) {
            prop_assume!((u - b).norm() > 1e-3);
            prop_assert!(range_rate(&u, &v, &b).unwrap().abs() <= v.norm() * (1.0 + 1e-12));
        }
    }
}
