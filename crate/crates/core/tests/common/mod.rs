#![allow(dead_code)]

use driftcast::drift::DetectorConfig;
use driftcast::hpo::SearchSpace;
use driftcast::ingest::{generate_synthetic, segment_days, DaySample, DriftEvent, DriftKind, LoadSeries, SyntheticProfile};
use driftcast::pipeline::{DurationModel, RunConfig};

pub fn detector_config(load_bandwidth: f64) -> DetectorConfig {
    DetectorConfig { load_bandwidth, ..DetectorConfig::default() }
}

pub const SCENARIO_DAYS: usize = 40;
/// First test day of the scenario under [`fast_config`]'s split.
pub const SCENARIO_TEST_START: usize = 24;
pub const DAY_LEVEL_SD: f64 = 0.15;
pub const NOISE_SD: f64 = 0.1;

pub fn jittered_profile() -> SyntheticProfile {
    SyntheticProfile { day_level_sd: DAY_LEVEL_SD, ..SyntheticProfile::default() }
}

/// Stationary training period with random day-to-day level changes, then a
/// steady upward creep of 0.1 kWh per day through the whole test period.
pub fn drift_scenario(seed: u64) -> LoadSeries {
    let events: Vec<DriftEvent> = (SCENARIO_TEST_START..SCENARIO_DAYS)
        .map(|day| DriftEvent { day, kind: DriftKind::MeanShift, magnitude: 0.1 })
        .collect();
    generate_synthetic(&jittered_profile(), &events, NOISE_SD, seed, SCENARIO_DAYS).unwrap()
}

pub fn stationary(seed: u64, days: usize) -> LoadSeries {
    generate_synthetic(&jittered_profile(), &[], NOISE_SD, seed, days).unwrap()
}

pub fn days_of(series: &LoadSeries) -> Vec<DaySample> {
    segment_days(series).unwrap().days
}

/// Desk-scale settings: small networks and budgets, machine-independent costs.
pub fn fast_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        search_space: SearchSpace {
            learning_rate_choices: vec![0.001, 0.01],
            dropout_rate_choices: vec![0.0, 0.1],
            n_units_choices: vec![8, 16],
            structural_frozen: false,
        },
        initial_hpo_budget: 3,
        adaptation_hpo_budget: 4,
        hpo_n_init: 2,
        window_stride: 2,
        duration_model: DurationModel::Synthetic { secs_per_window_epoch: 0.01 },
        ..RunConfig::default()
    };
    cfg.split.train_fraction = 0.6;
    cfg.detector = detector_config(0.15);
    cfg.train.epochs = 30;
    cfg.train.incremental_epochs = 10;
    cfg
}
