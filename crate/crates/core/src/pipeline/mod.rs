//! End-to-end runs: train once with hyperparameter search, then walk the test
//! days predicting each one and adapting never (baseline), every day
//! (passive), or when the drift detector fires (active).

mod config;

use std::time::Instant;

use chrono::NaiveDate;
use thiserror::Error;

pub use config::{ConfigError, DurationModel, ModeName, RunConfig};

use crate::drift::{init_drift_state, DriftError, DriftState};
use crate::eval::{
    daily_error, improvement, mape_with, run_trade_off, ComparisonRow, ComparisonTable, CostKind, CostLedger,
    DailyError, EvalError, EvaluationReport, HourlyPair, HpoEvent, RunMode, SplitSummary, REPORT_SCHEMA_VERSION,
};
use crate::forecaster::{
    build_windows, incremental_update, predict_day, train, ForecastError, ForecastModel, Hyperparameters, NormStats,
    SupervisedWindow,
};
use crate::hpo::{optimize_with, HpoError, TrialOutcome};
use crate::ingest::{resample_and_fill, segment_days, split_dataset, DaySample, IngestError, LoadSeries};

/// Validation score given to trials whose training diverged.
pub const DIVERGED_SCORE: f64 = 1e3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Drift(#[from] DriftError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Hpo(#[from] HpoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("reports are not comparable: {0}")]
    MismatchedRuns(String),
    #[error("no training windows: {0} training readings are fewer than input_len + horizon")]
    NoTrainingWindows(usize),
}

/// Everything shared by the three modes: the split, the initially trained
/// model and its search history, and the seeded drift detector.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub series_hash: String,
    pub train: Vec<DaySample>,
    pub validation: Vec<DaySample>,
    pub test: Vec<DaySample>,
    pub model: ForecastModel,
    pub initial_hpo: HpoEvent,
    pub ledger: CostLedger,
    pub drift: DriftState,
}

/// Predictions made for one test day, per hour, in kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct DayForecast {
    pub day_index: NaiveDate,
    pub hourly: Vec<Vec<f64>>,
}

fn normalized_windows(stats: &NormStats, series: &[f64], cfg: &RunConfig) -> Vec<SupervisedWindow> {
    build_windows(&stats.normalize_all(series), cfg.input_len, cfg.horizon, cfg.window_stride)
}

/// MAPE in kWh over every target of `windows`.
fn window_mape(model: &ForecastModel, windows: &[SupervisedWindow], exclude_zero: bool) -> Result<f64, PipelineError> {
    let ns = &model.norm_stats;
    let mut actual = Vec::with_capacity(windows.len() * model.horizon);
    let mut predicted = Vec::with_capacity(actual.capacity());
    for w in windows {
        let y = model.forward(&w.input)?;
        actual.extend(w.target.iter().map(|&v| ns.denormalize(v)));
        predicted.extend(y.into_iter().map(|v| ns.denormalize(v)));
    }
    Ok(mape_with(&actual, &predicted, exclude_zero)?)
}

fn score_or_penalty(r: Result<f64, PipelineError>) -> Result<f64, PipelineError> {
    match r {
        Err(PipelineError::Forecast(ForecastError::DivergedLoss { .. })) => Ok(DIVERGED_SCORE),
        Ok(s) if !s.is_finite() => Ok(DIVERGED_SCORE),
        other => other,
    }
}

fn readings(days: &[DaySample]) -> Vec<f64> {
    days.iter().flat_map(|d| d.readings.iter().copied()).collect()
}

/// Split the series, fit normalization on the training days, search
/// hyperparameters for the initial model and seed the drift detector.
pub fn prepare(config: &RunConfig, series: &LoadSeries) -> Result<Prepared, PipelineError> {
    config.validate()?;
    let filled;
    let series = if series.is_gapless() {
        series
    } else {
        filled = resample_and_fill(series, config.max_gap)?;
        &filled
    };
    let days = segment_days(series)?.days;
    let split = split_dataset(&days, &config.split)?;

    let train_readings = readings(&split.train);
    let stats = NormStats::fit(&train_readings)?;
    let train_windows = normalized_windows(&stats, &train_readings, config);
    if train_windows.is_empty() {
        return Err(PipelineError::NoTrainingWindows(train_readings.len()));
    }
    let mut val_series = train_readings[train_readings.len().saturating_sub(config.input_len)..].to_vec();
    val_series.extend(readings(&split.validation));
    let val_windows = normalized_windows(&stats, &val_series, config);

    let mut ledger = CostLedger::new(config.price_rate);
    let mut best: Option<(f64, ForecastModel)> = None;
    let (chosen, trials) = optimize_with(
        |hp: &Hyperparameters| -> Result<TrialOutcome, PipelineError> {
            let start = Instant::now();
            let fresh = ForecastModel::with_shape(*hp, stats, config.seed, config.input_len, config.horizon)?;
            let fitted = train(&fresh, &train_windows, &val_windows, config.train.epochs, &config.train);
            let (score, epochs) = match fitted {
                Ok((model, history)) => {
                    let score = score_or_penalty(window_mape(&model, &val_windows, config.exclude_zero_actuals))?;
                    if best.as_ref().is_none_or(|(b, _)| score < *b) {
                        best = Some((score, model));
                    }
                    (score, history.train_loss.len())
                }
                Err(ForecastError::DivergedLoss { epoch }) => (DIVERGED_SCORE, epoch),
                Err(e) => return Err(e.into()),
            };
            let secs = config.duration_model.seconds(start.elapsed().as_secs_f64(), epochs, train_windows.len());
            ledger.record(None, CostKind::InitialTraining, secs)?;
            Ok(TrialOutcome { score, duration_secs: secs })
        },
        &config.search_space,
        config.initial_hpo_budget,
        config.seed,
        config.hpo_n_init,
    )?;
    let model = match best {
        Some((_, m)) => m,
        // every trial diverged: fall back to an untrained model of the chosen shape
        None => ForecastModel::with_shape(chosen, stats, config.seed, config.input_len, config.horizon)?,
    };

    let pool: Vec<DaySample> = split.train_pool().cloned().collect();
    let drift = init_drift_state(&pool, config.detector)?;
    Ok(Prepared {
        config: config.clone(),
        series_hash: series.content_hash(),
        train: split.train,
        validation: split.validation,
        test: split.test,
        initial_hpo: HpoEvent { day_index: None, chosen: model.hyperparameters, trials },
        model,
        ledger,
        drift,
    })
}

/// Windows whose targets fall inside `day`, built with the readings that
/// precede it.
fn day_series(context: &[f64], day: &DaySample, input_len: usize) -> Vec<f64> {
    let mut s = context[context.len().saturating_sub(input_len)..].to_vec();
    s.extend_from_slice(&day.readings);
    s
}

struct Adaptation<'a> {
    config: &'a RunConfig,
    ledger: &'a mut CostLedger,
    hpo_history: &'a mut Vec<HpoEvent>,
}

impl Adaptation<'_> {
    /// Tune learning and dropout rates on the day (fit on the first 5/6 of its
    /// targets, score on the rest), then update on all of the day's windows.
    fn run(
        &mut self,
        model: &ForecastModel,
        context: &[f64],
        day: &DaySample,
        day_number: usize,
    ) -> Result<ForecastModel, PipelineError> {
        let cfg = self.config;
        let ns = model.norm_stats;
        let series = ns.normalize_all(&day_series(context, day, cfg.input_len));
        let offset = series.len() - day.len();
        let all = build_windows(&series, cfg.input_len, cfg.horizon, cfg.window_stride);
        // window k starts at k * stride; its first target sits at day position start + input_len - offset
        let cut = day.len() * 5 / 6;
        let target_start = |k: usize| (k * cfg.window_stride + cfg.input_len) as isize - offset as isize;
        let (mut fit, mut score): (Vec<SupervisedWindow>, Vec<SupervisedWindow>) = (Vec::new(), Vec::new());
        for (k, w) in all.iter().enumerate() {
            let t = target_start(k);
            if t + cfg.horizon as isize <= cut as isize {
                fit.push(w.clone());
            } else if t >= cut as isize {
                score.push(w.clone());
            }
        }
        if fit.is_empty() || score.is_empty() {
            fit = all.clone();
            score = all.clone();
        }

        let history_windows = || {
            let mut s = ns.normalize_all(context);
            s.extend(ns.normalize_all(&day.readings[..cut]));
            build_windows(&s, cfg.input_len, cfg.horizon, cfg.window_stride)
        };
        let space = if cfg.retune_units_full_retrain {
            cfg.search_space.clone()
        } else {
            cfg.search_space.frozen(model.hyperparameters.n_units)
        };
        let day_index = Some(day.day_index);
        let seed = cfg.seed ^ (day_number as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let ledger = &mut *self.ledger;
        let (chosen, trials) = optimize_with(
            |hp: &Hyperparameters| -> Result<TrialOutcome, PipelineError> {
                let start = Instant::now();
                let (fitted, epochs, n_windows) = if hp.n_units == model.hyperparameters.n_units {
                    let e = cfg.train.incremental_epochs;
                    (incremental_update(model, &fit, hp, e, &cfg.train), e, fit.len())
                } else {
                    let hist = history_windows();
                    let fresh = ForecastModel { version: model.version, ..ForecastModel::with_shape(*hp, ns, cfg.seed, cfg.input_len, cfg.horizon)? };
                    let e = cfg.train.epochs;
                    (train(&fresh, &hist, &[], e, &cfg.train).map(|(m, _)| m), e, hist.len())
                };
                let score_value = match fitted {
                    Ok(m) => score_or_penalty(window_mape(&m, &score, cfg.exclude_zero_actuals))?,
                    Err(ForecastError::DivergedLoss { .. }) => DIVERGED_SCORE,
                    Err(e) => return Err(e.into()),
                };
                let secs = cfg.duration_model.seconds(start.elapsed().as_secs_f64(), epochs, n_windows);
                ledger.record(day_index, CostKind::Hpo, secs)?;
                Ok(TrialOutcome { score: score_value, duration_secs: secs })
            },
            &space,
            cfg.adaptation_hpo_budget,
            seed,
            cfg.hpo_n_init,
        )?;

        let start = Instant::now();
        let (next, epochs, n_windows) = if chosen.n_units == model.hyperparameters.n_units {
            let e = cfg.train.incremental_epochs;
            (incremental_update(model, &all, &chosen, e, &cfg.train)?, e, all.len())
        } else {
            let mut s = ns.normalize_all(context);
            s.extend(ns.normalize_all(&day.readings));
            let hist = build_windows(&s, cfg.input_len, cfg.horizon, cfg.window_stride);
            let fresh = ForecastModel::with_shape(chosen, ns, cfg.seed, cfg.input_len, cfg.horizon)?;
            let (m, _) = train(&fresh, &hist, &[], cfg.train.epochs, &cfg.train)?;
            (ForecastModel { version: model.version + 1, ..m }, cfg.train.epochs, hist.len())
        };
        let secs = cfg.duration_model.seconds(start.elapsed().as_secs_f64(), epochs, n_windows);
        self.ledger.record(day_index, CostKind::Adaptation, secs)?;
        self.hpo_history.push(HpoEvent { day_index, chosen, trials });
        Ok(next)
    }
}

fn score_day(day: &DaySample, hourly: &[Vec<f64>], exclude_zero: bool) -> Result<DailyError, PipelineError> {
    let sph = day.len() / 24;
    let pairs: Vec<HourlyPair> = hourly
        .iter()
        .enumerate()
        .map(|(h, f)| {
            let start = h * sph;
            let end = (start + f.len()).min(day.len());
            HourlyPair { actual: day.readings[start..end].to_vec(), forecast: f[..end - start].to_vec() }
        })
        .collect();
    Ok(daily_error(day.day_index, &pairs, exclude_zero)?)
}

/// Walk the test days under `mode`, returning the report and every forecast.
pub fn run_detailed(prepared: &Prepared, mode: RunMode) -> Result<(EvaluationReport, Vec<DayForecast>), PipelineError> {
    let cfg = &prepared.config;
    if let RunMode::Active { tau } = mode {
        if !(0.0..=1.0).contains(&tau) {
            return Err(ConfigError::TauOutOfRange(tau).into());
        }
    }
    let mut model = prepared.model.clone();
    let mut ledger = prepared.ledger.clone();
    let mut hpo_history = vec![prepared.initial_hpo.clone()];
    let mut drift = prepared.drift.clone();
    let mut context: Vec<f64> = readings(&prepared.train);
    context.extend(readings(&prepared.validation));

    let mut daily = Vec::with_capacity(prepared.test.len());
    let mut decisions = Vec::new();
    let mut forecasts = Vec::with_capacity(prepared.test.len());
    let mut adaptations = 0;
    for (k, day) in prepared.test.iter().enumerate() {
        let decision = match mode {
            RunMode::Active { tau } => Some(drift.decide(day, tau)?),
            _ => None,
        };
        let hourly = predict_day(&model, &context, day)?;
        daily.push(score_day(day, &hourly, cfg.exclude_zero_actuals)?);
        forecasts.push(DayForecast { day_index: day.day_index, hourly });

        let adapt = match mode {
            RunMode::Baseline => false,
            RunMode::Passive => true,
            RunMode::Active { .. } => decision.as_ref().is_some_and(|d| d.is_drift),
        };
        if adapt {
            let mut a = Adaptation { config: cfg, ledger: &mut ledger, hpo_history: &mut hpo_history };
            model = a.run(&model, &context, day, k)?;
            adaptations += 1;
        }
        if let Some(d) = decision {
            drift.advance(day, d.divergence)?;
            decisions.push(d);
        }
        context.extend_from_slice(&day.readings);
    }

    let mut report = EvaluationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        mode,
        series_hash: prepared.series_hash.clone(),
        split: SplitSummary {
            train_days: prepared.train.len(),
            validation_days: prepared.validation.len(),
            test_days: prepared.test.len(),
            first_test_day: prepared.test.first().map(|d| d.day_index).unwrap_or_default(),
        },
        daily_errors: daily,
        mean_mape: 0.0,
        std_mape: 0.0,
        mean_rmse: 0.0,
        std_rmse: 0.0,
        drift_decisions: decisions,
        adaptation_count: adaptations,
        total_cost: 0.0,
        improvement_vs_baseline: None,
        trade_off_score: None,
        cost_ledger: ledger,
        hpo_history,
    };
    report.refresh_summary();
    Ok((report, forecasts))
}

pub fn run_prepared(prepared: &Prepared, mode: RunMode) -> Result<EvaluationReport, PipelineError> {
    Ok(run_detailed(prepared, mode)?.0)
}

pub fn run_baseline(config: &RunConfig, series: &LoadSeries) -> Result<EvaluationReport, PipelineError> {
    run_prepared(&prepare(config, series)?, RunMode::Baseline)
}

pub fn run_passive(config: &RunConfig, series: &LoadSeries) -> Result<EvaluationReport, PipelineError> {
    run_prepared(&prepare(config, series)?, RunMode::Passive)
}

pub fn run_active(config: &RunConfig, series: &LoadSeries, tau: f64) -> Result<EvaluationReport, PipelineError> {
    run_prepared(&prepare(config, series)?, RunMode::Active { tau })
}

/// Run the mode named in `config`.
pub fn run(config: &RunConfig, series: &LoadSeries) -> Result<EvaluationReport, PipelineError> {
    run_prepared(&prepare(config, series)?, config.run_mode()?)
}

/// Improvement, cost and trade-off of each candidate against the baseline.
pub fn compare(baseline: &EvaluationReport, candidates: &[EvaluationReport]) -> Result<ComparisonTable, PipelineError> {
    let mut rows = Vec::with_capacity(candidates.len());
    for c in candidates {
        if c.series_hash != baseline.series_hash {
            return Err(PipelineError::MismatchedRuns(format!(
                "series {} vs baseline {}",
                c.series_hash, baseline.series_hash
            )));
        }
        if c.split != baseline.split {
            return Err(PipelineError::MismatchedRuns(format!("split {:?} vs baseline {:?}", c.split, baseline.split)));
        }
        let imp = improvement(c.mean_mape, baseline.mean_mape)?;
        rows.push(ComparisonRow {
            mode: c.mode,
            mean_mape: c.mean_mape,
            std_mape: c.std_mape,
            mean_rmse: c.mean_rmse,
            std_rmse: c.std_rmse,
            improvement_mape: imp,
            improvement_rmse: improvement(c.mean_rmse, baseline.mean_rmse)?,
            adaptation_count: c.adaptation_count,
            total_cost: c.total_cost,
            trade_off_score: run_trade_off(imp, c.total_cost, c.adaptation_count),
        });
    }
    Ok(ComparisonTable {
        series_hash: baseline.series_hash.clone(),
        baseline_mean_mape: baseline.mean_mape,
        baseline_mean_rmse: baseline.mean_rmse,
        rows,
    })
}
