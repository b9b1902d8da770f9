//! Scenario files: RRH layout, true states, noise and run settings (TOML).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleConfig;
use crate::error::{Error, Result};
use crate::geometry::{ScattererState, UeState, Vec3};
use crate::nn::dataset::{SampleBox, ScattererSampling};
use crate::nn::TrainConfig;
use crate::noise::NoiseConfig;
use crate::par::Execution;
use crate::selection::{PathSimConfig, RrhCount};
use crate::ue_wls::WlsConfig;

/// Default layout of 18 RRHs (x, y, z in metres).
pub const DEFAULT_RRHS: [[f64; 3]; 18] = [
    [235.5042, 389.5038, 26.0],
    [287.5042, 389.5038, 32.0],
    [235.5042, 489.5038, 10.0],
    [287.5042, 489.5038, 40.0],
    [235.5042, 589.5038, 14.0],
    [287.5042, 589.5038, 50.0],
    [235.5042, 851.5038, 26.0],
    [287.5042, 851.5038, 26.0],
    [235.5042, 651.5038, 26.0],
    [287.5042, 651.5038, 26.0],
    [235.5042, 751.5038, 26.0],
    [287.5042, 751.5038, 26.0],
    [235.5042, 851.5038, 26.0],
    [287.5042, 851.5038, 26.0],
    [235.5042, 951.5038, 26.0],
    [287.5042, 951.5038, 26.0],
    [235.5042, 1051.5038, 26.0],
    [287.5042, 1051.5038, 26.0],
];

pub fn default_rrhs() -> Vec<Vec3> {
    DEFAULT_RRHS.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeConfig {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

impl Default for UeConfig {
    fn default() -> Self {
        Self { position: [250.0, 450.0, 0.0], velocity: [-10.0, 2.0, 5.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererConfig {
    pub position: [f64; 3],
    /// Signed speed along the UE's direction of travel (m/s).
    pub speed: f64,
    /// Index of the RRH that receives the reflected path.
    pub rrh: usize,
}

impl ScattererConfig {
    pub fn state(&self) -> ScattererState {
        ScattererState { position: Vec3::from(self.position), speed: self.speed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionScenario {
    /// Run LOS selection on simulated multipath before each WLS solve.
    pub enabled: bool,
    pub count: RrhCount,
    pub paths: PathSimConfig,
}

impl Default for SelectionScenario {
    fn default() -> Self {
        Self { enabled: false, count: RrhCount::Fixed(6), paths: PathSimConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetScenario {
    pub sample_box: SampleBox,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Noise of the test split when it differs from training.
    pub test_noise: Option<NoiseConfig>,
    pub scatterer: Option<ScattererSampling>,
}

impl Default for DatasetScenario {
    fn default() -> Self {
        Self { sample_box: SampleBox::default(), train: 2000, val: 500, test: 500, test_noise: None, scatterer: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub trials: usize,
    /// Number of LOS RRHs used (the first `n_a` of `rrhs` when selection is off).
    pub n_a: usize,
    /// Noise scale factors swept by `simulate` and `crlb`; empty means `noise` as given.
    pub rho: Vec<f64>,
    pub rrhs: Option<Vec<[f64; 3]>>,
    pub ue: UeConfig,
    pub noise: NoiseConfig,
    pub wls: WlsConfig,
    pub execution: Execution,
    pub scatterers: Vec<ScattererConfig>,
    pub selection: SelectionScenario,
    pub dataset: DatasetScenario,
    pub training: TrainConfig,
    pub ensemble: EnsembleConfig,
    /// Ridge added to the learned weighting matrix.
    pub nn_eps: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 1000,
            n_a: 6,
            rho: Vec::new(),
            rrhs: None,
            ue: UeConfig::default(),
            noise: NoiseConfig::default(),
            wls: WlsConfig::default(),
            execution: Execution::default(),
            scatterers: Vec::new(),
            selection: SelectionScenario::default(),
            dataset: DatasetScenario::default(),
            training: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            nn_eps: 0.1,
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sc = Self::from_toml(&text).map_err(|e| Error::parse(path, e.to_string().trim_end().to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn all_rrhs(&self) -> Vec<Vec3> {
        match &self.rrhs {
            Some(r) => r.iter().map(|b| Vec3::from(*b)).collect(),
            None => default_rrhs(),
        }
    }

    /// The `n_a` RRHs used without selection; the first is the reference.
    pub fn active_rrhs(&self) -> Vec<Vec3> {
        self.all_rrhs().into_iter().take(self.n_a).collect()
    }

    pub fn ue_state(&self) -> UeState {
        UeState::new(Vec3::from(self.ue.position), Vec3::from(self.ue.velocity))
    }

    /// Noise settings swept by the campaign commands.
    pub fn noise_grid(&self) -> Vec<(Option<f64>, NoiseConfig)> {
        if self.rho.is_empty() {
            vec![(None, self.noise)]
        } else {
            self.rho.iter().map(|&r| (Some(r), self.noise.with_rho(r))).collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.all_rrhs().len();
        if self.n_a < 2 || self.n_a > n {
            return Err(Error::InvalidConfig(format!("n_a = {} must be in 2..={n}", self.n_a)));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.rho.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidConfig("rho values must be positive".into()));
        }
        self.noise.validate()?;
        for (i, s) in self.scatterers.iter().enumerate() {
            if s.rrh >= n {
                return Err(Error::InvalidConfig(format!("scatterer {i} refers to RRH {} of {n}", s.rrh)));
            }
        }
        Ok(())
    }
}
