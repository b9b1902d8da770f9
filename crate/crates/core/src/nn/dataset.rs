//! Training samples `(m, e)`: noisy measurement vectors and the pseudo-linear
//! residual they induce at the true state.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ScattererState, UeState, Vec3};
use crate::noise::{NoiseConfig, Sampler};
use crate::rng::{self, Purpose};
use crate::scatterer_wls::{scatterer_measurement, scatterer_residual};
use crate::ue_wls::{measurement_vector, residual};

pub const DATASET_FORMAT: &str = "mmloc-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn stream_base(self) -> u64 {
        (self as u64) << 32
    }
}

/// Box from which sample states are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleBox {
    pub position_min: [f64; 3],
    pub position_max: [f64; 3],
    pub velocity_min: [f64; 3],
    pub velocity_max: [f64; 3],
}

impl Default for SampleBox {
    fn default() -> Self {
        Self {
            position_min: [240.0, 410.0, 2.0],
            position_max: [280.0, 740.0, 2.0],
            velocity_min: [-10.0; 3],
            velocity_max: [10.0; 3],
        }
    }
}

impl SampleBox {
    pub fn validate(&self) -> Result<()> {
        for k in 0..3 {
            let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
            if !ok(self.position_min[k], self.position_max[k]) || !ok(self.velocity_min[k], self.velocity_max[k]) {
                return Err(Error::InvalidConfig(format!("invalid sample box on axis {k}")));
            }
        }
        Ok(())
    }

    fn draw_vec<R: Rng + ?Sized>(lo: &[f64; 3], hi: &[f64; 3], rng: &mut R) -> Vec3 {
        Vec3::from_fn(|k, _| {
            if lo[k] == hi[k] {
                lo[k]
            } else {
                rng.sample(Uniform::new_inclusive(lo[k], hi[k]).expect("validated box"))
            }
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> UeState {
        UeState::new(
            Self::draw_vec(&self.position_min, &self.position_max, rng),
            Self::draw_vec(&self.velocity_min, &self.velocity_max, rng),
        )
    }
}

/// Scatterer datasets: one path to `rrh` off a scatterer drawn in a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScattererSampling {
    pub rrh: usize,
    pub position_min: [f64; 3],
    pub position_max: [f64; 3],
    pub speed_min: f64,
    pub speed_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    pub split: Split,
    pub seed: u64,
    /// RRH positions; the first is the reference.
    pub rrhs: Vec<[f64; 3]>,
    pub noise: NoiseConfig,
    pub sample_box: SampleBox,
    pub scatterer: Option<ScattererSampling>,
    pub samples: usize,
}

impl DatasetMeta {
    pub fn rrh_positions(&self) -> Vec<Vec3> {
        self.rrhs.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect()
    }

    pub fn input_width(&self) -> usize {
        if self.scatterer.is_some() {
            4
        } else {
            4 * self.rrhs.len() - 2
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub m: Vec<f64>,
    pub e: Vec<f64>,
    pub ue: UeState,
    pub scatterer: Option<ScattererState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.m.as_slice()).collect()
    }

    pub fn targets(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.e.as_slice()).collect()
    }
}

/// UE dataset of `n` samples; states drawn from `sample_box`, noise from `noise`.
pub fn make_dataset(
    rrhs: &[Vec3],
    sample_box: &SampleBox,
    noise: &NoiseConfig,
    n: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    sample_box.validate()?;
    let sampler = Sampler::new(rrhs.len(), noise)?;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream(seed, Purpose::Dataset, split.stream_base() + i as u64);
        let ue = sample_box.draw(&mut r);
        let m0 = measurement_vector(&ue, rrhs)?;
        let m = sampler.sample(&m0, &mut r)?;
        let e = residual(&m, rrhs, &ue)?;
        samples.push(Sample { m: m.as_slice().to_vec(), e: e.as_slice().to_vec(), ue, scatterer: None });
    }
    Ok(Dataset { meta: meta(rrhs, sample_box, noise, n, seed, split, None), samples })
}

/// Scatterer dataset: UE drawn from `sample_box` (non-zero velocity), scatterer
/// from `sampling`; residual evaluated with the true UE state.
pub fn make_scatterer_dataset(
    rrhs: &[Vec3],
    sample_box: &SampleBox,
    sampling: &ScattererSampling,
    noise: &NoiseConfig,
    n: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    sample_box.validate()?;
    if sampling.rrh >= rrhs.len() {
        return Err(Error::InvalidConfig(format!("scatterer RRH index {} out of range", sampling.rrh)));
    }
    let sampler = Sampler::for_scatterer(noise)?;
    let b_n = rrhs[sampling.rrh];
    let b_ref = rrhs[0];
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream(seed, Purpose::Scatterer, split.stream_base() + i as u64);
        let ue = loop {
            let ue = sample_box.draw(&mut r);
            if ue.velocity.norm() > 1e-3 {
                break ue;
            }
        };
        let xs = ScattererState {
            position: SampleBox::draw_vec(&sampling.position_min, &sampling.position_max, &mut r),
            speed: if sampling.speed_min == sampling.speed_max {
                sampling.speed_min
            } else {
                r.sample(Uniform::new_inclusive(sampling.speed_min, sampling.speed_max).map_err(|_| {
                    Error::InvalidConfig("invalid scatterer speed range".into())
                })?)
            },
        };
        let m0 = scatterer_measurement(&xs, &b_n, &b_ref, &ue)?;
        let m = sampler.sample(&m0, &mut r)?;
        let e = scatterer_residual(&m, &b_n, &b_ref, &ue, &xs)?;
        samples.push(Sample { m: m.as_slice().to_vec(), e: e.as_slice().to_vec(), ue, scatterer: Some(xs) });
    }
    Ok(Dataset { meta: meta(rrhs, sample_box, noise, n, seed, split, Some(*sampling)), samples })
}

fn meta(
    rrhs: &[Vec3],
    sample_box: &SampleBox,
    noise: &NoiseConfig,
    n: usize,
    seed: u64,
    split: Split,
    scatterer: Option<ScattererSampling>,
) -> DatasetMeta {
    DatasetMeta {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        split,
        seed,
        rrhs: rrhs.iter().map(|b| [b.x, b.y, b.z]).collect(),
        noise: *noise,
        sample_box: *sample_box,
        scatterer,
        samples: n,
    }
}

/// Sidecar path: `data.csv` -> `data.csv.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn header(k: usize, scatterer: bool) -> Vec<String> {
    let mut h: Vec<String> = (0..k).map(|i| format!("m{i}")).collect();
    h.extend((0..k).map(|i| format!("e{i}")));
    h.extend(["ux", "uy", "uz", "vx", "vy", "vz"].map(String::from));
    if scatterer {
        h.extend(["sx", "sy", "sz", "speed"].map(String::from));
    }
    h
}

impl Dataset {
    /// Write the samples as CSV and the metadata as a JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let k = self.meta.input_width();
        let scatterer = self.meta.scatterer.is_some();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let csv_err = |e: csv::Error| Error::parse(path, e.to_string());
        w.write_record(header(k, scatterer)).map_err(csv_err)?;
        for s in &self.samples {
            let mut row: Vec<String> = s.m.iter().chain(&s.e).map(|v| v.to_string()).collect();
            row.extend(s.ue.position.iter().chain(s.ue.velocity.iter()).map(|v| v.to_string()));
            if let Some(xs) = &s.scatterer {
                row.extend(xs.position.iter().map(|v| v.to_string()));
                row.push(xs.speed.to_string());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let mp = meta_path(path);
        let json = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::parse(&mp, e.to_string()))?;
        let mut f = File::create(&mp).map_err(|e| Error::io(&mp, e))?;
        f.write_all(json.as_bytes()).and_then(|_| f.write_all(b"\n")).map_err(|e| Error::io(&mp, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mp = meta_path(path);
        let meta_file = File::open(&mp).map_err(|e| Error::io(&mp, e))?;
        let meta: DatasetMeta =
            serde_json::from_reader(BufReader::new(meta_file)).map_err(|e| Error::parse(&mp, e.to_string()))?;
        if meta.format != DATASET_FORMAT || meta.version != DATASET_VERSION {
            return Err(Error::parse(&mp, format!("unsupported dataset format {} v{}", meta.format, meta.version)));
        }
        let k = meta.input_width();
        let scatterer = meta.scatterer.is_some();
        let width = 2 * k + 6 + if scatterer { 4 } else { 0 };
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(BufReader::new(file));
        let head = reader.headers().map_err(|e| Error::parse(path, e.to_string()))?;
        if head.len() != width {
            return Err(Error::dim("dataset columns", width, head.len()));
        }
        let mut samples = Vec::with_capacity(meta.samples);
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path, e.to_string()))?;
            let vals: Vec<f64> = rec
                .iter()
                .enumerate()
                .map(|(col, f)| {
                    f.parse::<f64>()
                        .map_err(|e| Error::parse(path, format!("line {}, column {}: {e}", line + 2, col + 1)))
                })
                .collect::<Result<_>>()?;
            if vals.len() != width {
                return Err(Error::parse(path, format!("line {}: expected {width} fields, got {}", line + 2, vals.len())));
            }
            let ue = UeState::from_slice(&vals[2 * k..2 * k + 6]);
            let scatterer = scatterer.then(|| ScattererState {
                position: Vec3::new(vals[2 * k + 6], vals[2 * k + 7], vals[2 * k + 8]),
                speed: vals[2 * k + 9],
            });
            samples.push(Sample { m: vals[..k].to_vec(), e: vals[k..2 * k].to_vec(), ue, scatterer });
        }
        if samples.len() != meta.samples {
            return Err(Error::parse(path, format!("expected {} samples, found {}", meta.samples, samples.len())));
        }
        Ok(Self { meta, samples })
    }
}
