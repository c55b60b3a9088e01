use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drift::DetectorConfig;
use crate::error::Error;
use crate::eval::{RunMode, DEFAULT_PRICE_RATE};
use crate::forecaster::{TrainConfig, DEFAULT_HORIZON, DEFAULT_INPUT_LEN};
use crate::hpo::{SearchSpace, DEFAULT_ADAPTATION_BUDGET, DEFAULT_INITIAL_BUDGET, DEFAULT_N_INIT};
use crate::ingest::SplitSpec;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("active mode needs tau")]
    MissingTau,
    #[error("tau is only valid in active mode")]
    UnexpectedTau,
    #[error("tau {0} outside [0, 1]")]
    TauOutOfRange(f64),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Baseline,
    Passive,
    Active,
}

/// How adaptation and training time is measured for the cost ledger.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DurationModel {
    #[default]
    WallClock,
    /// `secs_per_window_epoch * epochs * windows`; machine independent.
    Synthetic { secs_per_window_epoch: f64 },
}

impl DurationModel {
    pub fn seconds(&self, wall: f64, epochs: usize, windows: usize) -> f64 {
        match self {
            DurationModel::WallClock => wall,
            DurationModel::Synthetic { secs_per_window_epoch } => secs_per_window_epoch * (epochs * windows) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: ModeName,
    pub tau: Option<f64>,
    pub seed: u64,
    pub split: SplitSpec,
    pub detector: DetectorConfig,
    pub search_space: SearchSpace,
    pub initial_hpo_budget: usize,
    pub adaptation_hpo_budget: usize,
    pub hpo_n_init: usize,
    pub train: TrainConfig,
    pub input_len: usize,
    pub horizon: usize,
    /// Readings between consecutive training window starts.
    pub window_stride: usize,
    pub price_rate: f64,
    pub duration_model: DurationModel,
    pub exclude_zero_actuals: bool,
    /// Let adaptation-time search change `n_units`, retraining from scratch
    /// on all data seen so far when it does.
    pub retune_units_full_retrain: bool,
    /// Longest run of missing readings filled by interpolation.
    pub max_gap: u64,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: ModeName::Baseline,
            tau: None,
            seed: 0,
            split: SplitSpec::default(),
            detector: DetectorConfig::default(),
            search_space: SearchSpace::default(),
            initial_hpo_budget: DEFAULT_INITIAL_BUDGET,
            adaptation_hpo_budget: DEFAULT_ADAPTATION_BUDGET,
            hpo_n_init: DEFAULT_N_INIT,
            train: TrainConfig::default(),
            input_len: DEFAULT_INPUT_LEN,
            horizon: DEFAULT_HORIZON,
            window_stride: 1,
            price_rate: DEFAULT_PRICE_RATE,
            duration_model: DurationModel::WallClock,
            exclude_zero_actuals: false,
            retune_units_full_retrain: false,
            max_gap: 6,
            input: None,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_toml_str(&text)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn run_mode(&self) -> Result<RunMode, ConfigError> {
        match (self.mode, self.tau) {
            (ModeName::Baseline, None) => Ok(RunMode::Baseline),
            (ModeName::Passive, None) => Ok(RunMode::Passive),
            (ModeName::Active, Some(tau)) if (0.0..=1.0).contains(&tau) => Ok(RunMode::Active { tau }),
            (ModeName::Active, Some(tau)) => Err(ConfigError::TauOutOfRange(tau)),
            (ModeName::Active, None) => Err(ConfigError::MissingTau),
            (_, Some(_)) => Err(ConfigError::UnexpectedTau),
        }
    }

    /// Same config set to run `mode`.
    pub fn with_mode(&self, mode: RunMode) -> Self {
        let (mode, tau) = match mode {
            RunMode::Baseline => (ModeName::Baseline, None),
            RunMode::Passive => (ModeName::Passive, None),
            RunMode::Active { tau } => (ModeName::Active, Some(tau)),
        };
        Self { mode, tau, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.run_mode()?;
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for (name, v) in [
            ("initial_hpo_budget", self.initial_hpo_budget),
            ("adaptation_hpo_budget", self.adaptation_hpo_budget),
            ("train.epochs", self.train.epochs),
            ("train.incremental_epochs", self.train.incremental_epochs),
            ("train.batch_size", self.train.batch_size),
            ("input_len", self.input_len),
            ("horizon", self.horizon),
            ("window_stride", self.window_stride),
        ] {
            if v == 0 {
                return invalid(format!("{name} must be >= 1"));
            }
        }
        if !(self.price_rate >= 0.0 && self.price_rate.is_finite()) {
            return invalid(format!("price_rate {} must be >= 0", self.price_rate));
        }
        if !(self.detector.load_bandwidth > 0.0 && self.detector.load_bandwidth.is_finite()) {
            return invalid(format!("detector.load_bandwidth {} must be > 0", self.detector.load_bandwidth));
        }
        if !(self.detector.min_history_bandwidth > 0.0) {
            return invalid("detector.min_history_bandwidth must be > 0".into());
        }
        if self.detector.grid_points < crate::density::MIN_GRID_POINTS {
            return invalid(format!("detector.grid_points must be >= {}", crate::density::MIN_GRID_POINTS));
        }
        if let DurationModel::Synthetic { secs_per_window_epoch } = self.duration_model {
            if !(secs_per_window_epoch >= 0.0 && secs_per_window_epoch.is_finite()) {
                return invalid("duration_model.secs_per_window_epoch must be >= 0".into());
            }
        }
        self.split.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.search_space.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.search_space.structural_frozen {
            return invalid("the initial search space cannot be frozen".into());
        }
        Ok(())
    }
}
