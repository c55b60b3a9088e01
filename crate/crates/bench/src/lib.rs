//! Fixtures shared by the criterion benches.

use driftcast::forecaster::{build_windows, ForecastModel, Hyperparameters, NormStats, SupervisedWindow};
use driftcast::ingest::{generate_synthetic, segment_days, DaySample, SyntheticProfile};

/// `n` days of the default synthetic profile at 10-minute resolution.
pub fn synthetic_days(n: usize, seed: u64) -> Vec<DaySample> {
    let series = generate_synthetic(&SyntheticProfile::default(), &[], 0.1, seed, n).expect("valid profile");
    segment_days(&series).expect("whole days").days
}

pub fn model(n_units: usize) -> ForecastModel {
    let hp = Hyperparameters { learning_rate: 0.001, dropout_rate: 0.1, n_units };
    ForecastModel::new(hp, NormStats { min: 0.0, max: 4.0 }, 1).expect("valid hyperparameters")
}

/// One day of normalized training windows.
pub fn day_windows(model: &ForecastModel, day: &DaySample) -> Vec<SupervisedWindow> {
    build_windows(&model.norm_stats.normalize_all(&day.readings), model.input_len, model.horizon, 1)
}
