//! Error metrics, daily aggregation, the adaptation cost ledger, the
//! performance-per-cost trade-off score and the run report.

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drift::DriftDecision;
use crate::forecaster::Hyperparameters;
use crate::hpo::TrialRecord;

pub const EPSILON_ZERO: f64 = 1e-6;
pub const HOURS_PER_DAY: usize = 24;
/// Currency per minute of adaptation time.
pub const DEFAULT_PRICE_RATE: f64 = 0.027;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("metric needs at least one value")]
    EmptyInput,
    #[error("actual has {actual} values, forecast has {forecast}")]
    LengthMismatch { actual: usize, forecast: usize },
    #[error("actual value {value} at position {index} is too close to zero for MAPE")]
    ZeroActual { index: usize, value: f64 },
    #[error("expected {expected} hourly forecasts, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error("negative duration {0}")]
    NegativeDuration(f64),
    #[error("baseline error must be positive")]
    ZeroBaseline,
    #[error("total cost must be positive")]
    ZeroCost,
    #[error("non-finite value in metric input")]
    NonFinite,
    #[error("cannot write report: {0}")]
    Render(String),
}

fn check_pair(actual: &[f64], forecast: &[f64]) -> Result<(), EvalError> {
    if actual.len() != forecast.len() {
        return Err(EvalError::LengthMismatch { actual: actual.len(), forecast: forecast.len() });
    }
    if actual.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if actual.iter().chain(forecast).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    Ok(())
}

/// Mean absolute percentage error, in percent.
pub fn mape(actual: &[f64], forecast: &[f64]) -> Result<f64, EvalError> {
    mape_with(actual, forecast, false)
}

/// [`mape`], optionally skipping near-zero actuals instead of failing. Fails
/// if every element would be skipped.
pub fn mape_with(actual: &[f64], forecast: &[f64], exclude_zero_actuals: bool) -> Result<f64, EvalError> {
    check_pair(actual, forecast)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut first_zero = None;
    for (i, (&a, &f)) in actual.iter().zip(forecast).enumerate() {
        if a.abs() <= EPSILON_ZERO {
            if !exclude_zero_actuals {
                return Err(EvalError::ZeroActual { index: i, value: a });
            }
            first_zero.get_or_insert((i, a));
            continue;
        }
        sum += ((a - f) / a).abs();
        n += 1;
    }
    if n == 0 {
        let (index, value) = first_zero.expect("non-empty input");
        return Err(EvalError::ZeroActual { index, value });
    }
    Ok(100.0 * sum / n as f64)
}

pub fn rmse(actual: &[f64], forecast: &[f64]) -> Result<f64, EvalError> {
    check_pair(actual, forecast)?;
    let ss: f64 = actual.iter().zip(forecast).map(|(a, f)| (a - f) * (a - f)).sum();
    Ok((ss / actual.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyError {
    pub day_index: NaiveDate,
    pub mape: f64,
    pub rmse: f64,
}

/// One hour's forecast and the readings it targets.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyPair {
    pub actual: Vec<f64>,
    pub forecast: Vec<f64>,
}

/// MAPE and RMSE per hourly pair, averaged over the 24 hours.
pub fn daily_error(day_index: NaiveDate, pairs: &[HourlyPair], exclude_zero_actuals: bool) -> Result<DailyError, EvalError> {
    if pairs.len() != HOURS_PER_DAY {
        return Err(EvalError::WrongCount { expected: HOURS_PER_DAY, got: pairs.len() });
    }
    let (mut m, mut r) = (0.0, 0.0);
    for p in pairs {
        m += mape_with(&p.actual, &p.forecast, exclude_zero_actuals)?;
        r += rmse(&p.actual, &p.forecast)?;
    }
    let n = HOURS_PER_DAY as f64;
    Ok(DailyError { day_index, mape: m / n, rmse: r / n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    InitialTraining,
    Adaptation,
    Hpo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    /// Test day that triggered the work; `None` for initial training.
    pub day_index: Option<NaiveDate>,
    pub kind: CostKind,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub entries: Vec<CostEntry>,
    pub price_rate: f64,
}

impl Default for CostLedger {
    fn default() -> Self {
        Self::new(DEFAULT_PRICE_RATE)
    }
}

impl CostLedger {
    pub fn new(price_rate: f64) -> Self {
        Self { entries: Vec::new(), price_rate }
    }

    pub fn record(&mut self, day_index: Option<NaiveDate>, kind: CostKind, duration_secs: f64) -> Result<(), EvalError> {
        if !(duration_secs >= 0.0) || !duration_secs.is_finite() {
            return Err(EvalError::NegativeDuration(duration_secs));
        }
        self.entries.push(CostEntry { day_index, kind, duration_secs });
        Ok(())
    }

    fn cost_where(&self, keep: impl Fn(&CostEntry) -> bool) -> f64 {
        self.entries.iter().filter(|e| keep(e)).map(|e| e.duration_secs / 60.0).sum::<f64>() * self.price_rate
    }

    /// Price of every entry.
    pub fn total(&self) -> f64 {
        self.cost_where(|_| true)
    }

    /// Price of the adaptation and adaptation-time HPO entries.
    pub fn adaptation_cost(&self) -> f64 {
        self.cost_where(|e| e.kind != CostKind::InitialTraining)
    }

    pub fn cost_of(&self, kind: CostKind) -> f64 {
        self.cost_where(|e| e.kind == kind)
    }

    pub fn count(&self, kind: CostKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    /// Appends another ledger's entries (priced at this ledger's rate).
    pub fn extend(&mut self, other: &CostLedger) {
        self.entries.extend(other.entries.iter().cloned());
    }
}

/// Functional form of [`CostLedger::record`].
pub fn record_cost(
    ledger: &CostLedger,
    day_index: Option<NaiveDate>,
    kind: CostKind,
    duration_secs: f64,
) -> Result<CostLedger, EvalError> {
    let mut next = ledger.clone();
    next.record(day_index, kind, duration_secs)?;
    Ok(next)
}

/// Error reduction relative to the baseline, in percent.
pub fn improvement(candidate_mean_error: f64, baseline_mean_error: f64) -> Result<f64, EvalError> {
    if !(baseline_mean_error > 0.0) {
        return Err(EvalError::ZeroBaseline);
    }
    Ok(100.0 * (baseline_mean_error - candidate_mean_error) / baseline_mean_error)
}

/// Improvement per unit of cost.
pub fn trade_off_score(improvement: f64, total_cost: f64) -> Result<f64, EvalError> {
    if !(total_cost > 0.0) {
        return Err(EvalError::ZeroCost);
    }
    Ok(improvement / total_cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunMode {
    Baseline,
    Passive,
    Active { tau: f64 },
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunMode::Baseline => write!(f, "baseline"),
            RunMode::Passive => write!(f, "passive"),
            RunMode::Active { tau } => write!(f, "active({tau})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train_days: usize,
    pub validation_days: usize,
    pub test_days: usize,
    pub first_test_day: NaiveDate,
}

/// One hyperparameter search: the initial one or one per adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpoEvent {
    pub day_index: Option<NaiveDate>,
    pub chosen: Hyperparameters,
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub mode: RunMode,
    pub series_hash: String,
    pub split: SplitSummary,
    pub daily_errors: Vec<DailyError>,
    pub mean_mape: f64,
    pub std_mape: f64,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub drift_decisions: Vec<DriftDecision>,
    pub adaptation_count: usize,
    /// Adaptation cost; initial training is listed in the ledger only.
    pub total_cost: f64,
    pub improvement_vs_baseline: Option<f64>,
    pub trade_off_score: Option<f64>,
    pub cost_ledger: CostLedger,
    pub hpo_history: Vec<HpoEvent>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trade-off score of a run against its baseline. A run that never adapted
/// costs nothing and scores 0.
pub fn run_trade_off(improvement_pct: f64, total_cost: f64, adaptation_count: usize) -> Option<f64> {
    match trade_off_score(improvement_pct, total_cost) {
        Ok(ts) => Some(ts),
        Err(_) if adaptation_count == 0 => Some(0.0),
        Err(_) => None,
    }
}

impl EvaluationReport {
    /// Recompute the summary statistics from `daily_errors`.
    pub fn refresh_summary(&mut self) {
        let m: Vec<f64> = self.daily_errors.iter().map(|d| d.mape).collect();
        let r: Vec<f64> = self.daily_errors.iter().map(|d| d.rmse).collect();
        (self.mean_mape, self.std_mape) = mean_std(&m);
        (self.mean_rmse, self.std_rmse) = mean_std(&r);
        self.total_cost = self.cost_ledger.adaptation_cost();
    }

    /// Fill in MAPE improvement and trade-off score against `baseline`.
    pub fn set_baseline(&mut self, baseline: &EvaluationReport) -> Result<(), EvalError> {
        let imp = improvement(self.mean_mape, baseline.mean_mape)?;
        self.improvement_vs_baseline = Some(imp);
        self.trade_off_score = run_trade_off(imp, self.total_cost, self.adaptation_count);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> crate::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| crate::Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> crate::Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| crate::Error::io(path, e))
    }

    pub fn daily_errors_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["day", "mape", "rmse", "divergence", "p_value", "is_drift"])
            .map_err(|e| EvalError::Render(e.to_string()))?;
        for d in &self.daily_errors {
            let dec = self.drift_decisions.iter().find(|x| x.day_index == d.day_index);
            w.write_record([
                d.day_index.to_string(),
                d.mape.to_string(),
                d.rmse.to_string(),
                dec.map(|x| x.divergence.to_string()).unwrap_or_default(),
                dec.map(|x| x.p_value.to_string()).unwrap_or_default(),
                dec.map(|x| x.is_drift.to_string()).unwrap_or_default(),
            ])
            .map_err(|e| EvalError::Render(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Render(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| EvalError::Render(e.to_string()))
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        out.push_str(&format!("mode              {}\n", self.mode));
        out.push_str(&format!("series            {}\n", &self.series_hash[..self.series_hash.len().min(16)]));
        out.push_str(&format!(
            "split             {} train / {} validation / {} test days\n",
            self.split.train_days, self.split.validation_days, self.split.test_days
        ));
        out.push_str(&format!("MAPE              {:.3} +- {:.3} %\n", self.mean_mape, self.std_mape));
        out.push_str(&format!("RMSE              {:.4} +- {:.4} kWh\n", self.mean_rmse, self.std_rmse));
        out.push_str(&format!("adaptations       {}\n", self.adaptation_count));
        out.push_str(&format!("adaptation cost   {:.4}\n", self.total_cost));
        out.push_str(&format!("improvement       {}\n", opt(self.improvement_vs_baseline)));
        out.push_str(&format!("trade-off score   {}\n\n", opt(self.trade_off_score)));
        out.push_str(&format!("{:<12} {:>9} {:>9} {:>10} {:>8} {:>6}\n", "day", "mape", "rmse", "div", "p", "drift"));
        for d in &self.daily_errors {
            let dec = self.drift_decisions.iter().find(|x| x.day_index == d.day_index);
            out.push_str(&format!(
                "{:<12} {:>9.3} {:>9.4} {:>10} {:>8} {:>6}\n",
                d.day_index.to_string(),
                d.mape,
                d.rmse,
                dec.map(|x| format!("{:.4}", x.divergence)).unwrap_or_else(|| "-".into()),
                dec.map(|x| format!("{:.3}", x.p_value)).unwrap_or_else(|| "-".into()),
                dec.map(|x| if x.is_drift { "yes" } else { "no" }).unwrap_or("-"),
            ));
        }
        out
    }
}

/// One candidate row of a comparison against a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub mode: RunMode,
    pub mean_mape: f64,
    pub std_mape: f64,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub improvement_mape: f64,
    pub improvement_rmse: f64,
    pub adaptation_count: usize,
    pub total_cost: f64,
    pub trade_off_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub series_hash: String,
    pub baseline_mean_mape: f64,
    pub baseline_mean_rmse: f64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "baseline: MAPE {:.3}  RMSE {:.4}\n{:<14} {:>8} {:>8} {:>9} {:>9} {:>8} {:>8} {:>6} {:>9} {:>8}\n",
            self.baseline_mean_mape,
            self.baseline_mean_rmse,
            "mode",
            "MAPE",
            "std",
            "Imp%",
            "RMSE",
            "std",
            "Imp%",
            "adapt",
            "cost",
            "TS"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>8.3} {:>8.3} {:>9.2} {:>9.4} {:>8.4} {:>8.2} {:>6} {:>9.4} {:>8}\n",
                r.mode.to_string(),
                r.mean_mape,
                r.std_mape,
                r.improvement_mape,
                r.mean_rmse,
                r.std_rmse,
                r.improvement_rmse,
                r.adaptation_count,
                r.total_cost,
                r.trade_off_score.map(|t| format!("{t:.2}")).unwrap_or_else(|| "-".into()),
            ));
        }
        out
    }
}
