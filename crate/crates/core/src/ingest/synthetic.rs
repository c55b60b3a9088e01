//! Seeded synthetic household streams with injected drift.

use chrono::{DateTime, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{readings_per_day, IngestError, LoadSeries};

/// Gaussian bump in the daily load shape, centred at `hour` (wraps at midnight).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub hour: f64,
    pub width_hours: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticProfile {
    pub base: f64,
    pub bumps: Vec<Bump>,
    pub resolution_secs: u32,
    pub start_time: DateTime<Utc>,
    /// Standard deviation of a random level offset drawn once per day.
    pub day_level_sd: f64,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            base: 1.0,
            bumps: vec![
                Bump { hour: 7.5, width_hours: 1.5, amplitude: 0.8 },
                Bump { hour: 19.0, width_hours: 2.0, amplitude: 1.5 },
            ],
            resolution_secs: 600,
            start_time: Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap(),
            day_level_sd: 0.0,
        }
    }
}

impl SyntheticProfile {
    /// Noise-free load at `hour` of the day, with the shape rotated by `phase_hours`.
    pub fn shape_at(&self, hour: f64, phase_hours: f64) -> f64 {
        let h = hour - phase_hours;
        self.base
            + self
                .bumps
                .iter()
                .map(|b| {
                    let d = (h - b.hour).rem_euclid(24.0);
                    let d = d.min(24.0 - d);
                    b.amplitude * (-0.5 * (d / b.width_hours).powi(2)).exp()
                })
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftKind {
    /// Adds `magnitude` kWh to every reading.
    MeanShift,
    /// Multiplies the daily shape by `magnitude`.
    ScaleShift,
    /// Rotates the daily shape by `magnitude` hours.
    ShapeSwap,
}

/// Permanent change of the generating process from `day` (0-based) onward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub day: usize,
    pub kind: DriftKind,
    pub magnitude: f64,
}

/// Generator parameters as read from a profile file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default)]
    pub profile: SyntheticProfile,
    #[serde(default)]
    pub events: Vec<DriftEvent>,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
}

fn default_noise() -> f64 {
    0.1
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            profile: SyntheticProfile::default(),
            events: Vec::new(),
            noise_sd: default_noise(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ProcessState {
    offset: f64,
    scale: f64,
    phase: f64,
}

pub fn generate_synthetic(
    profile: &SyntheticProfile,
    drift_events: &[DriftEvent],
    noise_sd: f64,
    seed: u64,
    n_days: usize,
) -> Result<LoadSeries, IngestError> {
    if n_days == 0 {
        return Err(IngestError::InvalidEvent("n_days must be at least 1".into()));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(IngestError::InvalidEvent(format!("noise_sd {noise_sd} must be >= 0")));
    }
    for e in drift_events {
        if e.day >= n_days {
            return Err(IngestError::InvalidEvent(format!(
                "event day {} outside 0..{n_days}",
                e.day
            )));
        }
        if !e.magnitude.is_finite() || (e.kind == DriftKind::ScaleShift && e.magnitude <= 0.0) {
            return Err(IngestError::InvalidEvent(format!(
                "bad magnitude {} for {:?}",
                e.magnitude, e.kind
            )));
        }
    }
    if !(profile.day_level_sd >= 0.0 && profile.day_level_sd.is_finite()) {
        return Err(IngestError::InvalidEvent(format!("day_level_sd {} must be >= 0", profile.day_level_sd)));
    }
    let rpd = readings_per_day(profile.resolution_secs)?;
    let step_hours = profile.resolution_secs as f64 / 3600.0;
    let noise = Normal::new(0.0, noise_sd).expect("validated sd");
    let day_level = Normal::new(0.0, profile.day_level_sd).expect("validated sd");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut state = ProcessState { offset: 0.0, scale: 1.0, phase: 0.0 };
    let mut values = Vec::with_capacity(n_days * rpd);
    for day in 0..n_days {
        for e in drift_events.iter().filter(|e| e.day == day) {
            match e.kind {
                DriftKind::MeanShift => state.offset += e.magnitude,
                DriftKind::ScaleShift => state.scale *= e.magnitude,
                DriftKind::ShapeSwap => state.phase += e.magnitude,
            }
        }
        let level = if profile.day_level_sd > 0.0 { day_level.sample(&mut rng) } else { 0.0 };
        for k in 0..rpd {
            let clean = state.scale * profile.shape_at(k as f64 * step_hours, state.phase) + state.offset + level;
            let eps = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            values.push((clean + eps).max(0.0));
        }
    }
    LoadSeries::new(profile.start_time, profile.resolution_secs, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::segment_days;

    fn day_means(s: &LoadSeries) -> Vec<f64> {
        segment_days(s)
            .unwrap()
            .days
            .iter()
            .map(|d| d.readings.iter().sum::<f64>() / d.len() as f64)
            .collect()
    }

    #[test]
    fn noiseless_stationary_days_are_identical() {
        let s = generate_synthetic(&SyntheticProfile::default(), &[], 0.0, 1, 30).unwrap();
        let days = segment_days(&s).unwrap().days;
        assert_eq!(days.len(), 30);
        assert!(days.iter().all(|d| d.readings == days[0].readings));
        let means = day_means(&s);
        assert!(means.iter().all(|m| *m == means[0]));
    }

    #[test]
    fn same_seed_same_bits() {
        let p = SyntheticProfile::default();
        let ev = [DriftEvent { day: 3, kind: DriftKind::ScaleShift, magnitude: 1.3 }];
        let a = generate_synthetic(&p, &ev, 0.2, 9, 10).unwrap();
        let b = generate_synthetic(&p, &ev, 0.2, 9, 10).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = generate_synthetic(&p, &ev, 0.2, 10, 10).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn mean_shift_moves_day_means_by_magnitude() {
        let noise_sd = 0.1;
        let ev = [DriftEvent { day: 15, kind: DriftKind::MeanShift, magnitude: 5.0 }];
        let s = generate_synthetic(&SyntheticProfile::default(), &ev, noise_sd, 4, 30).unwrap();
        let m = day_means(&s);
        let before = m[..14].iter().sum::<f64>() / 14.0;
        let after = m[15..].iter().sum::<f64>() / 15.0;
        let tol = 3.0 * noise_sd / 144f64.sqrt();
        assert!(((after - before) - 5.0).abs() <= tol, "diff {}", after - before);
    }

    #[test]
    fn day_level_offsets_move_whole_days() {
        let p = SyntheticProfile { day_level_sd: 0.3, ..SyntheticProfile::default() };
        let s = generate_synthetic(&p, &[], 0.0, 2, 20).unwrap();
        let flat = generate_synthetic(&SyntheticProfile::default(), &[], 0.0, 2, 20).unwrap();
        let (a, b) = (segment_days(&s).unwrap().days, segment_days(&flat).unwrap().days);
        let mut offsets = Vec::new();
        for (x, y) in a.iter().zip(&b) {
            let d: Vec<f64> = x.readings.iter().zip(&y.readings).map(|(u, v)| u - v).collect();
            assert!(d.iter().all(|v| (v - d[0]).abs() < 1e-12));
            offsets.push(d[0]);
        }
        assert!(offsets.iter().any(|o| o.abs() > 0.05));
    }

    #[test]
    fn shape_swap_rotates_profile() {
        let p = SyntheticProfile::default();
        let ev = [DriftEvent { day: 1, kind: DriftKind::ShapeSwap, magnitude: 12.0 }];
        let s = generate_synthetic(&p, &ev, 0.0, 0, 2).unwrap();
        let days = segment_days(&s).unwrap().days;
        for k in 0..144 {
            let rotated = days[0].readings[(k + 72) % 144];
            assert!((days[1].readings[k] - rotated).abs() < 1e-12);
        }
    }

    #[test]
    fn event_outside_range_is_invalid() {
        let ev = [DriftEvent { day: 30, kind: DriftKind::MeanShift, magnitude: 1.0 }];
        assert!(matches!(
            generate_synthetic(&SyntheticProfile::default(), &ev, 0.1, 0, 30),
            Err(IngestError::InvalidEvent(_))
        ));
    }

    #[test]
    fn spec_parses_from_toml() {
        let spec: SyntheticSpec = toml::from_str(
            r#"
            noise_sd = 0.05
            [profile]
            base = 2.0
            [[events]]
            day = 10
            kind = "mean-shift"
            magnitude = 1.5
            "#,
        )
        .unwrap();
        assert_eq!(spec.profile.base, 2.0);
        assert_eq!(spec.profile.bumps.len(), 2);
        assert_eq!(spec.events[0].kind, DriftKind::MeanShift);
    }
}
