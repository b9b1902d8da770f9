//! LOS path selection: smallest-delay pick per RRH, single-RRH rough fixes,
//! two-cluster split, and ranking by distance to the LOS cluster centre.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, angular_vectors, los_range, wrap_angle, UeState, Vec3};
use crate::ue_wls::{angle_index, measurement_len, tdoa_index};

/// Propagation speed (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMeasurement {
    pub phi: f64,
    pub theta: f64,
    /// Time of arrival (s), including the common clock bias.
    pub tau: f64,
    /// Doppler expressed as a range rate (m/s).
    pub range_rate: f64,
    pub energy: f64,
    pub rrh_index: usize,
    /// Ground truth used only for scoring.
    pub los: bool,
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// One path per selected RRH; the first is the reference.
    pub los_set: Vec<PathMeasurement>,
    /// Paths not selected, grouped by RRH index.
    pub nlos_sets: Vec<Vec<PathMeasurement>>,
}

impl SelectionResult {
    pub fn all_los(&self) -> bool {
        self.los_set.iter().all(|p| p.los)
    }

    pub fn rrh_indices(&self) -> Vec<usize> {
        self.los_set.iter().map(|p| p.rrh_index).collect()
    }
}

/// Position along the measured ray at the measured range.
pub fn rough_fix(p: &PathMeasurement, b_n: &Vec3, v_c: f64) -> Vec3 {
    let (a, _, _) = angular_vectors(p.phi, p.theta);
    b_n + a * (v_c * p.tau)
}

#[derive(Debug, Clone)]
pub struct TwoMeans {
    pub c_los: Vec3,
    pub c_nlos: Vec3,
    /// `true` for members of the LOS cluster.
    pub labels: Vec<bool>,
}

fn assign(points: &[Vec3], c0: &Vec3, c1: &Vec3) -> Vec<bool> {
    points
        .iter()
        .map(|p| (p - c0).norm_squared() <= (p - c1).norm_squared())
        .collect()
}

fn centroid(points: &[Vec3], labels: &[bool], which: bool) -> Option<Vec3> {
    let mut sum = Vec3::zeros();
    let mut n = 0usize;
    for (p, &l) in points.iter().zip(labels) {
        if l == which {
            sum += p;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

fn spread(points: &[Vec3], labels: &[bool], which: bool, c: &Vec3) -> f64 {
    let (sum, n) = points
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == which)
        .fold((0.0, 0usize), |(s, n), (p, _)| (s + (p - c).norm_squared(), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Lloyd's algorithm with two centres seeded at the farthest-apart pair.
pub fn kmeans2(points: &[Vec3], max_iters: usize) -> Result<TwoMeans> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints(points.len()));
    }
    let (mut i0, mut i1, mut best) = (0, 1, -1.0);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = (points[i] - points[j]).norm_squared();
            if d > best {
                (i0, i1, best) = (i, j, d);
            }
        }
    }
    let mut c0 = points[i0];
    let mut c1 = points[i1];
    let mut labels = assign(points, &c0, &c1);
    for _ in 0..max_iters {
        c0 = centroid(points, &labels, true).unwrap_or(c0);
        c1 = centroid(points, &labels, false).unwrap_or(c1);
        let next = assign(points, &c0, &c1);
        if next == labels {
            break;
        }
        labels = next;
    }
    let n0 = labels.iter().filter(|&&l| l).count();
    let n1 = labels.len() - n0;
    let first_is_los = match n0.cmp(&n1) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => spread(points, &labels, true, &c0) <= spread(points, &labels, false, &c1),
    };
    if first_is_los {
        Ok(TwoMeans { c_los: c0, c_nlos: c1, labels })
    } else {
        Ok(TwoMeans { c_los: c1, c_nlos: c0, labels: labels.iter().map(|l| !l).collect() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RrhCount {
    /// Select exactly this many RRHs.
    Fixed(usize),
    /// Count RRHs whose first path carries at least half the strongest first-path energy.
    EnergyThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub count: RrhCount,
    pub max_iters: usize,
    pub v_c: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { count: RrhCount::Fixed(6), max_iters: 100, v_c: SPEED_OF_LIGHT }
    }
}

/// Pick `N_a` LOS paths from per-RRH path lists (`meas[n]` belongs to `rrhs[n]`).
pub fn select_los(
    meas: &[Vec<PathMeasurement>],
    rrhs: &[Vec3],
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    if meas.len() != rrhs.len() {
        return Err(Error::dim("per-RRH path lists", rrhs.len(), meas.len()));
    }
    let mut firsts: Vec<(usize, usize)> = Vec::new();
    for (n, paths) in meas.iter().enumerate() {
        let best = paths
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.tau.total_cmp(&b.1.tau))
            .map(|(k, _)| k);
        if let Some(k) = best {
            firsts.push((n, k));
        }
    }
    if firsts.len() < 2 {
        return Err(Error::InsufficientPaths(firsts.len()));
    }
    let fixes: Vec<Vec3> = firsts
        .iter()
        .map(|&(n, k)| rough_fix(&meas[n][k], &rrhs[n], cfg.v_c))
        .collect();
    let clusters = kmeans2(&fixes, cfg.max_iters)?;
    let mut order: Vec<usize> = (0..firsts.len()).collect();
    let dist: Vec<f64> = fixes.iter().map(|f| (f - clusters.c_los).norm()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));

    let n_a = match cfg.count {
        RrhCount::Fixed(n) => n,
        RrhCount::EnergyThreshold => {
            let energy = |&(n, k): &(usize, usize)| meas[n][k].energy;
            let p_max = firsts.iter().map(energy).fold(f64::MIN, f64::max);
            firsts.iter().filter(|f| energy(f) >= p_max / 2.0).count().max(2)
        }
    };
    if n_a < 2 {
        return Err(Error::InvalidConfig(format!("N_a must be at least 2, got {n_a}")));
    }
    if n_a > firsts.len() {
        return Err(Error::InsufficientPaths(firsts.len()));
    }
    let mut chosen: Vec<(usize, usize)> = order[..n_a].iter().map(|&i| firsts[i]).collect();
    let reference = chosen
        .iter()
        .enumerate()
        .max_by(|(i, &(n, k)), (j, &(m, l))| {
            meas[n][k].energy.total_cmp(&meas[m][l].energy).then(j.cmp(i))
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    let reference = chosen.remove(reference);
    chosen.insert(0, reference);

    let los_set: Vec<PathMeasurement> = chosen.iter().map(|&(n, k)| meas[n][k]).collect();
    let nlos_sets = meas
        .iter()
        .enumerate()
        .map(|(n, paths)| {
            paths
                .iter()
                .enumerate()
                .filter(|(k, _)| !chosen.contains(&(n, *k)))
                .map(|(_, p)| *p)
                .collect()
        })
        .collect();
    Ok(SelectionResult { los_set, nlos_sets })
}

/// UE measurement vector from a selected LOS set (reference first); the clock
/// bias cancels in the delay differences.
pub fn measurement_from_paths(los_set: &[PathMeasurement], v_c: f64) -> DVector<f64> {
    let n_a = los_set.len();
    let mut m = DVector::zeros(measurement_len(n_a));
    let r = &los_set[0];
    for n in 1..n_a {
        let p = &los_set[n];
        m[tdoa_index(n)] = v_c * (p.tau - r.tau);
        m[tdoa_index(n) + 1] = p.range_rate - r.range_rate;
    }
    for (j, p) in los_set.iter().enumerate() {
        m[angle_index(n_a, j)] = p.phi;
        m[angle_index(n_a, j) + 1] = p.theta;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSimConfig {
    /// Probability that an RRH observes the LOS path.
    pub p_d: f64,
    pub nlos_per_rrh: usize,
    /// Common clock bias times propagation speed (m).
    pub clock_bias_m: f64,
    pub delta_d: f64,
    pub delta_a: f64,
    pub scatterer_min: [f64; 3],
    pub scatterer_max: [f64; 3],
    pub max_scatterer_speed: f64,
}

impl Default for PathSimConfig {
    fn default() -> Self {
        Self {
            p_d: 0.5,
            nlos_per_rrh: 2,
            clock_bias_m: 0.0,
            delta_d: 0.1,
            delta_a: 0.0175,
            scatterer_min: [240.0, 450.0, 0.0],
            scatterer_max: [280.0, 850.0, 20.0],
            max_scatterer_speed: 10.0,
        }
    }
}

/// Simulated multipath observations at every RRH: an optional LOS path plus
/// single-bounce paths off scatterers drawn in the configured box.
pub fn simulate_paths<R: Rng + ?Sized>(
    ue: &UeState,
    rrhs: &[Vec3],
    cfg: &PathSimConfig,
    rng: &mut R,
) -> Result<Vec<Vec<PathMeasurement>>> {
    if !(cfg.p_d > 0.0 && cfg.p_d <= 1.0) {
        return Err(Error::InvalidConfig(format!("detection probability must be in (0, 1], got {}", cfg.p_d)));
    }
    let v_c = SPEED_OF_LIGHT;
    let dir = ue.velocity.try_normalize(0.0).unwrap_or_else(Vec3::x);
    let coord = |k: usize| Uniform::new_inclusive(cfg.scatterer_min[k], cfg.scatterer_max[k]);
    let boxes = [coord(0), coord(1), coord(2)].map(|u| u.expect("valid scatterer box"));
    let speed = Uniform::new_inclusive(0.0, cfg.max_scatterer_speed.max(0.0)).expect("valid speed range");
    let mut out = Vec::with_capacity(rrhs.len());
    for (n, b) in rrhs.iter().enumerate() {
        let mut paths = Vec::with_capacity(cfg.nlos_per_rrh + 1);
        let los_present = rng.random::<f64>() < cfg.p_d;
        if los_present {
            let r = los_range(&ue.position, b);
            let aoa = geometry::aoa_los(&ue.position, b)?;
            let rr = geometry::range_rate(&ue.position, &ue.velocity, b)?;
            paths.push(noisy_path(r, rr, aoa.phi, aoa.theta, 1.0 / (r * r), n, true, cfg, v_c, rng));
        }
        for _ in 0..cfg.nlos_per_rrh {
            let s = Vec3::new(
                boxes[0].sample(rng),
                boxes[1].sample(rng),
                boxes[2].sample(rng),
            );
            let sdot = dir * speed.sample(rng);
            let d2 = los_range(&ue.position, &s);
            let d1 = los_range(&s, b);
            let aoa = geometry::aoa_los(&s, b)?;
            let rr = (ue.velocity - sdot).dot(&(ue.position - s)) / d2 + sdot.dot(&((s - b) / d1));
            let len = d1 + d2;
            paths.push(noisy_path(len, rr, aoa.phi, aoa.theta, 0.1 / (len * len), n, false, cfg, v_c, rng));
        }
        out.push(paths);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn noisy_path<R: Rng + ?Sized>(
    length: f64,
    rate: f64,
    phi: f64,
    theta: f64,
    energy: f64,
    rrh_index: usize,
    los: bool,
    cfg: &PathSimConfig,
    v_c: f64,
    rng: &mut R,
) -> PathMeasurement {
    let mut n = || rng.sample::<f64, _>(StandardNormal);
    let tau = ((length + cfg.clock_bias_m + cfg.delta_d * n()) / v_c).max(0.0);
    PathMeasurement {
        phi: wrap_angle(phi + cfg.delta_a * n()),
        theta: (theta + cfg.delta_a * n()).clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
        tau,
        range_rate: rate + 0.1 * cfg.delta_d * n(),
        energy,
        rrh_index,
        los,
    }
}
