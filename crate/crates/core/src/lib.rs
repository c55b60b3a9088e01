//! Drift-adaptive interval load forecasting.
//!
//! A univariate consumption stream is cut into daily samples. Each new day is
//! compared with all preceding days through Gaussian KDE densities and the
//! square-root Jensen–Shannon distance; the distance is ranked against the
//! evolving distribution of past distances, and a small upper-tail p-value
//! flags a change. An LSTM forecaster (12 readings in, 6 out) is adapted by
//! resuming training from its stored weights on the newest day only, either
//! every day (passive) or only when the detector fires (active).
//!
//! Module map:
//!
//! * [`ingest`]: CSV parsing, gap filling, day segmentation, chronological
//!   splits and a synthetic drifting-stream generator.
//! * [`density`]: Gaussian KDE on a shared equally spaced grid.
//! * [`divergence`]: entropy, KL, JSD and sqrt-JSD on gridded densities.
//! * [`drift`]: the dynamic p-value change detector.
//! * [`forecaster`]: from-scratch peephole LSTM with BPTT, Adam, incremental
//!   updates, checkpoints and a seasonal-naive comparator.
//! * [`hpo`]: Gaussian-process / expected-improvement hyperparameter search.
//! * [`eval`]: MAPE/RMSE, daily aggregation, cost ledger, trade-off score and
//!   the run report.
//! * [`pipeline`]: baseline, passive and active runs plus report comparison.

pub mod density;
pub mod divergence;
pub mod drift;
pub mod error;
pub mod eval;
pub mod forecaster;
pub mod hpo;
pub mod ingest;
pub mod pipeline;

pub use density::{DensityEstimate, Grid};
pub use divergence::{DivergenceKind, DivergenceValue};
pub use drift::{DriftDecision, DriftState};
pub use error::{Error, Result};
pub use eval::{CostKind, CostLedger, DailyError, EvaluationReport, RunMode};
pub use forecaster::{ForecastModel, Hyperparameters, SupervisedWindow};
pub use hpo::{SearchSpace, TrialRecord};
pub use ingest::{DaySample, LoadSeries, SplitSpec};
pub use pipeline::RunConfig;
