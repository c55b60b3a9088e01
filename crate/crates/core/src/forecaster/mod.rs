//! Single-layer peephole LSTM forecaster with incremental weight continuation,
//! plus a seasonal-naive comparator.

pub mod checkpoint;
pub mod lstm;
pub mod train;
mod windows;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use lstm::{Gate, LstmWeights};
pub use train::{incremental_update, mse_loss, train, TrainConfig, TrainHistory};
pub use windows::{build_windows, predict_day, seasonal_naive};

pub const DEFAULT_INPUT_LEN: usize = 12;
pub const DEFAULT_HORIZON: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum ForecastError {
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("input has {got} steps, model expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("need at least {needed} context readings, got {got}")]
    InsufficientContext { needed: usize, got: usize },
    #[error("{0} readings per day is not a whole number of readings per hour")]
    UnsupportedDayLength(usize),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("n_units cannot change from {from} to {to} without full retraining")]
    StructuralChange { from: usize, to: usize },
    #[error("invalid normalization statistics: {0}")]
    InvalidNormalization(String),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    pub n_units: usize,
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), ForecastError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ForecastError::InvalidHyperparameters(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ForecastError::InvalidHyperparameters(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.n_units == 0 {
            return Err(ForecastError::InvalidHyperparameters("n_units must be >= 1".into()));
        }
        Ok(())
    }
}

/// Min-max scaling fitted once on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: f64,
    pub max: f64,
}

impl NormStats {
    pub fn fit(values: &[f64]) -> Result<Self, ForecastError> {
        if values.is_empty() {
            return Err(ForecastError::InvalidNormalization("no values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ForecastError::NonFiniteInput);
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { min, max })
    }

    /// Width of the fitted range; 1 for a constant training set.
    pub fn scale(&self) -> f64 {
        let w = self.max - self.min;
        if w > 0.0 {
            w
        } else {
            1.0
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.min) / self.scale()
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        y * self.scale() + self.min
    }

    pub fn normalize_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.normalize(x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedWindow {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub weights: LstmWeights,
    pub hyperparameters: Hyperparameters,
    pub input_len: usize,
    pub horizon: usize,
    pub norm_stats: NormStats,
    pub rng_seed: u64,
    pub version: u64,
}

impl ForecastModel {
    pub fn new(hyperparameters: Hyperparameters, norm_stats: NormStats, rng_seed: u64) -> Result<Self, ForecastError> {
        Self::with_shape(hyperparameters, norm_stats, rng_seed, DEFAULT_INPUT_LEN, DEFAULT_HORIZON)
    }

    pub fn with_shape(
        hyperparameters: Hyperparameters,
        norm_stats: NormStats,
        rng_seed: u64,
        input_len: usize,
        horizon: usize,
    ) -> Result<Self, ForecastError> {
        hyperparameters.validate()?;
        if input_len == 0 || horizon == 0 {
            return Err(ForecastError::InvalidHyperparameters("input_len and horizon must be >= 1".into()));
        }
        if !(norm_stats.min <= norm_stats.max) {
            return Err(ForecastError::InvalidNormalization(format!(
                "min {} > max {}",
                norm_stats.min, norm_stats.max
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        Ok(Self {
            weights: LstmWeights::random(hyperparameters.n_units, horizon, &mut rng),
            hyperparameters,
            input_len,
            horizon,
            norm_stats,
            rng_seed,
            version: 0,
        })
    }

    /// Inference on normalized input; dropout is off.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, ForecastError> {
        if input.len() != self.input_len {
            return Err(ForecastError::InputLength { expected: self.input_len, got: input.len() });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(ForecastError::NonFiniteInput);
        }
        Ok(self.weights.predict(input))
    }

    /// Forecast in kWh from raw readings.
    pub fn predict_raw(&self, readings: &[f64]) -> Result<Vec<f64>, ForecastError> {
        let y = self.forward(&self.norm_stats.normalize_all(readings))?;
        Ok(y.into_iter().map(|v| self.norm_stats.denormalize(v)).collect())
    }

    pub(crate) fn check_shape(&self) -> Result<(), ForecastError> {
        let w = &self.weights;
        let n = self.hyperparameters.n_units;
        let bad = |what: &str| Err(ForecastError::InvalidCheckpoint(what.to_string()));
        if w.n_units != n || w.horizon != self.horizon {
            return bad("weight dimensions disagree with hyperparameters");
        }
        let fresh = LstmWeights::zeros(n, self.horizon);
        for ((name, a), (_, b)) in w.tensors().into_iter().zip(fresh.tensors()) {
            if a.len() != b.len() {
                return bad(&format!("tensor {name} has {} entries, expected {}", a.len(), b.len()));
            }
        }
        if !w.all_finite() {
            return bad("non-finite weights");
        }
        Ok(())
    }
}
