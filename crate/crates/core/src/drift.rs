//! Dynamic change-point detection on daily samples.
//!
//! Every new day is compared with the pool of all preceding readings by the
//! square-root JSD of their KDEs. The distance is ranked against a KDE of all
//! past daily distances; the upper-tail mass at the new distance is the
//! p-value, and a drift is declared when it falls below the significance
//! level `tau`. Distance history and reference pool grow on every day, drift
//! or not, so the implied threshold moves with the data.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{self, estimate_kde, shared_grid, silverman_bandwidth, DensityError, Grid};
use crate::divergence::{self, DivergenceError};
use crate::ingest::DaySample;

#[derive(Debug, Error, PartialEq)]
pub enum DriftError {
    #[error("need at least 2 training days to seed the divergence history, got {0}")]
    InsufficientHistory(usize),
    #[error("divergence history is empty")]
    EmptyHistory,
    #[error("divergence {0} outside [0, 1]")]
    OutOfRangeDivergence(f64),
    #[error("significance level {0} outside [0, 1]")]
    InvalidTau(f64),
    #[error("day has {got} readings, expected {expected}")]
    DayLength { expected: usize, got: usize },
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Fixed KDE bandwidth for load readings (kWh), shared by every sample.
    pub load_bandwidth: f64,
    /// Grid size for the load densities.
    pub grid_points: usize,
    /// Lower bound on the Silverman bandwidth of the divergence history.
    pub min_history_bandwidth: f64,
    /// Use the empirical rank `(#{history > d} + 1)/(n + 1)` while fewer
    /// than [`SMALL_HISTORY`] divergences are recorded.
    pub small_history_fallback: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            load_bandwidth: 10.0,
            grid_points: density::DEFAULT_GRID_POINTS,
            min_history_bandwidth: 1e-3,
            small_history_fallback: false,
        }
    }
}

pub const SMALL_HISTORY: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftDecision {
    pub day_index: NaiveDate,
    pub divergence: f64,
    pub p_value: f64,
    pub is_drift: bool,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftState {
    reference_readings: Vec<f64>,
    divergence_history: Vec<f64>,
    readings_per_day: usize,
    history_bandwidth: f64,
    config: DetectorConfig,
}

fn day_divergence(day: &[f64], reference: &[f64], cfg: &DetectorConfig) -> Result<f64, DriftError> {
    let grid = shared_grid(day, reference, cfg.load_bandwidth, cfg.grid_points)?;
    let p = estimate_kde(day, cfg.load_bandwidth, &grid)?;
    let q = estimate_kde(reference, cfg.load_bandwidth, &grid)?;
    Ok(divergence::sqrt_jsd(&p, &q)?.value)
}

/// Seed the detector: for days `k = 2..d`, the distance between day `k` and
/// all days before it, giving `d - 1` historical values.
pub fn init_drift_state(train_days: &[DaySample], config: DetectorConfig) -> Result<DriftState, DriftError> {
    if train_days.len() < 2 {
        return Err(DriftError::InsufficientHistory(train_days.len()));
    }
    let rpd = train_days[0].len();
    if let Some(d) = train_days.iter().find(|d| d.len() != rpd) {
        return Err(DriftError::DayLength { expected: rpd, got: d.len() });
    }
    let pool: Vec<f64> = train_days.iter().flat_map(|d| d.readings.iter().copied()).collect();
    let history = (1..train_days.len())
        .into_par_iter()
        .map(|k| day_divergence(&train_days[k].readings, &pool[..k * rpd], &config))
        .collect::<Result<Vec<_>, _>>()?;
    let history_bandwidth = history_bandwidth(&history, &config);
    Ok(DriftState {
        reference_readings: pool,
        divergence_history: history,
        readings_per_day: rpd,
        history_bandwidth,
        config,
    })
}

fn history_bandwidth(history: &[f64], cfg: &DetectorConfig) -> f64 {
    silverman_bandwidth(history).max(cfg.min_history_bandwidth)
}

/// Upper-tail mass at `d` of the Gaussian KDE over `history` (Silverman
/// bandwidth floored at `min_bandwidth`), by trapezoid rule on
/// `[min(0, history) - 5h, max(1, history) + 5h]`.
pub fn tail_p_value(history: &[f64], d: f64, min_bandwidth: f64) -> Result<f64, DriftError> {
    if history.is_empty() {
        return Err(DriftError::EmptyHistory);
    }
    let h = silverman_bandwidth(history).max(min_bandwidth);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for &v in history {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let pad = density::GRID_PADDING_BANDWIDTHS * h;
    let (lo, hi) = (lo - pad, hi + pad);
    if d <= lo {
        return Ok(1.0);
    }
    if d >= hi {
        return Ok(0.0);
    }
    // at least eight points per bandwidth so narrow kernels are resolved
    let n_points = (((hi - lo) / (h / 8.0)).ceil() as usize + 1).clamp(density::DEFAULT_GRID_POINTS, 1 << 16);
    let grid = Grid::new(lo, hi, n_points)?;
    let kde = estimate_kde(history, h, &grid)?;
    let f = kde.density();
    let total = grid.integrate(f);

    let step = grid.step();
    let j = (((d - lo) / step).floor() as usize).min(n_points - 2);
    let (x0, x1) = (grid.point(j), grid.point(j + 1));
    let t = ((d - x0) / (x1 - x0)).clamp(0.0, 1.0);
    let f_d = f[j] + t * (f[j + 1] - f[j]);
    let partial = 0.5 * (f_d + f[j + 1]) * (x1 - d).max(0.0);
    let rest: f64 = if j + 1 < n_points - 1 {
        step * (f[j + 2..n_points - 1].iter().sum::<f64>() + 0.5 * (f[j + 1] + f[n_points - 1]))
    } else {
        0.0
    };
    Ok(((partial + rest) / total).clamp(0.0, 1.0))
}

/// `(#{history > d} + 1) / (n + 1)`.
pub fn empirical_p_value(history: &[f64], d: f64) -> Result<f64, DriftError> {
    if history.is_empty() {
        return Err(DriftError::EmptyHistory);
    }
    let above = history.iter().filter(|&&v| v > d).count();
    Ok((above + 1) as f64 / (history.len() + 1) as f64)
}

impl DriftState {
    pub fn reference_readings(&self) -> &[f64] {
        &self.reference_readings
    }

    pub fn divergence_history(&self) -> &[f64] {
        &self.divergence_history
    }

    pub fn load_bandwidth(&self) -> f64 {
        self.config.load_bandwidth
    }

    pub fn history_bandwidth(&self) -> f64 {
        self.history_bandwidth
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    fn check_day(&self, day: &DaySample) -> Result<(), DriftError> {
        if day.len() != self.readings_per_day {
            return Err(DriftError::DayLength { expected: self.readings_per_day, got: day.len() });
        }
        Ok(())
    }

    /// sqrt-JSD between the new day and the whole reference pool.
    pub fn compute_divergence(&self, new_day: &DaySample) -> Result<f64, DriftError> {
        self.check_day(new_day)?;
        day_divergence(&new_day.readings, &self.reference_readings, &self.config)
    }

    pub fn p_value(&self, divergence: f64) -> Result<f64, DriftError> {
        if self.config.small_history_fallback && self.divergence_history.len() < SMALL_HISTORY {
            return empirical_p_value(&self.divergence_history, divergence);
        }
        tail_p_value(&self.divergence_history, divergence, self.config.min_history_bandwidth)
    }

    /// Test the new day against the history. `tau = 1` always flags a drift
    /// (always-adapt), `tau = 0` never does.
    pub fn decide(&self, new_day: &DaySample, tau: f64) -> Result<DriftDecision, DriftError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(DriftError::InvalidTau(tau));
        }
        let divergence = self.compute_divergence(new_day)?;
        let p_value = self.p_value(divergence)?;
        Ok(DriftDecision {
            day_index: new_day.day_index,
            divergence,
            p_value,
            is_drift: is_drift(p_value, tau),
            tau,
        })
    }

    /// Record the day's distance and add its readings to the reference pool.
    pub fn advance(&mut self, new_day: &DaySample, divergence: f64) -> Result<(), DriftError> {
        if !(0.0..=1.0).contains(&divergence) {
            return Err(DriftError::OutOfRangeDivergence(divergence));
        }
        self.check_day(new_day)?;
        self.divergence_history.push(divergence);
        self.reference_readings.extend_from_slice(&new_day.readings);
        self.history_bandwidth = history_bandwidth(&self.divergence_history, &self.config);
        Ok(())
    }
}

/// `p < tau`, with `tau >= 1` meaning "always": a p-value can reach exactly 1.
pub fn is_drift(p_value: f64, tau: f64) -> bool {
    tau >= 1.0 || p_value < tau
}
