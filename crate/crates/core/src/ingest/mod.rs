//! Consumption streams: parsing, gap filling, daily segmentation and splits.

mod csv_io;
mod synthetic;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use csv_io::{parse_load_csv, parse_load_csv_reader, write_load_csv, CsvSchema};
pub use synthetic::{generate_synthetic, Bump, DriftEvent, DriftKind, SyntheticProfile, SyntheticSpec};

pub const SECONDS_PER_DAY: u32 = 86_400;
pub const DEFAULT_RESOLUTION_SECS: u32 = 600;
pub const SERIES_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("no data rows")]
    EmptySeries,
    #[error("line {line}: timestamp is not after the previous row")]
    NonMonotoneTimestamps { line: usize },
    #[error("line {line}: negative reading {value}")]
    NegativeReading { line: usize, value: f64 },
    #[error("line {line}: {reason}")]
    UnparseableRow { line: usize, reason: String },
    #[error("line {line}: timestamp is not on the {resolution_secs}s grid")]
    MisalignedTimestamp { line: usize, resolution_secs: u32 },
    #[error("{missing} missing slots between {from} and {to} exceed max gap {max_gap}")]
    GapTooLarge {
        from: DateTime<Utc>,
        to: DateTime<Utc>,
        missing: u64,
        max_gap: u64,
    },
    #[error("series has gaps; fill them before segmenting")]
    NotGapless,
    #[error("resolution {0}s does not divide a day")]
    IncompatibleResolution(u32),
    #[error("no complete day in series")]
    NoCompleteDay,
    #[error("need at least {needed} days, got {got}")]
    TooFewDays { needed: usize, got: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid drift event: {0}")]
    InvalidEvent(String),
    #[error("invalid series: {0}")]
    InvalidSeries(String),
}

/// Univariate consumption stream on a fixed time grid.
///
/// Readings are stored together with their slot index on the grid so that a
/// freshly parsed series may carry gaps; [`resample_and_fill`] removes them.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSeries {
    start_time: DateTime<Utc>,
    resolution_secs: u32,
    utc_offset_secs: i32,
    values: Vec<f64>,
    slots: Vec<u64>,
}

impl LoadSeries {
    /// Gapless series starting at `start_time`.
    pub fn new(
        start_time: DateTime<Utc>,
        resolution_secs: u32,
        values: Vec<f64>,
    ) -> Result<Self, IngestError> {
        let slots = (0..values.len() as u64).collect();
        Self::with_slots(start_time, resolution_secs, 0, values, slots)
    }

    pub fn with_slots(
        start_time: DateTime<Utc>,
        resolution_secs: u32,
        utc_offset_secs: i32,
        values: Vec<f64>,
        slots: Vec<u64>,
    ) -> Result<Self, IngestError> {
        if values.is_empty() {
            return Err(IngestError::EmptySeries);
        }
        if resolution_secs == 0 {
            return Err(IngestError::InvalidSeries("resolution must be positive".into()));
        }
        if values.len() != slots.len() {
            return Err(IngestError::InvalidSeries("slot/value length mismatch".into()));
        }
        if slots[0] != 0 || slots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(IngestError::InvalidSeries(
                "slots must start at 0 and increase strictly".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(IngestError::InvalidSeries(format!(
                "reading {v} is not a finite non-negative value"
            )));
        }
        if utc_offset_secs.abs() >= SECONDS_PER_DAY as i32 {
            return Err(IngestError::InvalidSeries("utc offset out of range".into()));
        }
        Ok(Self {
            start_time,
            resolution_secs,
            utc_offset_secs,
            values,
            slots,
        })
    }

    pub fn with_utc_offset(mut self, utc_offset_secs: i32) -> Result<Self, IngestError> {
        if utc_offset_secs.abs() >= SECONDS_PER_DAY as i32 {
            return Err(IngestError::InvalidSeries("utc offset out of range".into()));
        }
        self.utc_offset_secs = utc_offset_secs;
        Ok(self)
    }

    pub fn start_time(&self) -> DateTime<Utc> {
        self.start_time
    }

    pub fn resolution_secs(&self) -> u32 {
        self.resolution_secs
    }

    pub fn utc_offset_secs(&self) -> i32 {
        self.utc_offset_secs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slots(&self) -> &[u64] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_gapless(&self) -> bool {
        *self.slots.last().expect("non-empty") as usize + 1 == self.slots.len()
    }

    pub fn timestamp_of_slot(&self, slot: u64) -> DateTime<Utc> {
        self.start_time + Duration::seconds(slot as i64 * self.resolution_secs as i64)
    }

    pub fn readings_per_day(&self) -> Result<usize, IngestError> {
        readings_per_day(self.resolution_secs)
    }

    /// SHA-256 over the grid definition and the exact bit patterns of the
    /// readings; identifies the input a report was computed from.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.start_time.to_rfc3339().as_bytes());
        h.update(self.resolution_secs.to_le_bytes());
        h.update(self.utc_offset_secs.to_le_bytes());
        for (slot, v) in self.slots.iter().zip(&self.values) {
            h.update(slot.to_le_bytes());
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_file(&self) -> Result<SeriesFile, IngestError> {
        if !self.is_gapless() {
            return Err(IngestError::NotGapless);
        }
        Ok(SeriesFile {
            schema_version: SERIES_SCHEMA_VERSION,
            start_time: self.start_time,
            resolution_secs: self.resolution_secs,
            utc_offset_secs: self.utc_offset_secs,
            values: self.values.clone(),
        })
    }
}

/// Read a series from a canonical JSON series file, or from a consumption CSV
/// with the default columns when the extension is `.csv`.
pub fn load_series(path: impl AsRef<std::path::Path>) -> crate::Result<LoadSeries> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return parse_load_csv(path, &CsvSchema::default());
    }
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    let file: SeriesFile = serde_json::from_str(&text).map_err(|e| crate::Error::json(path, e))?;
    Ok(LoadSeries::try_from(file)?)
}

pub fn save_series(series: &LoadSeries, path: impl AsRef<std::path::Path>) -> crate::Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&series.to_file()?).expect("series file serializes");
    std::fs::write(path, text).map_err(|e| crate::Error::io(path, e))
}

/// Canonical on-disk form of a gapless series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFile {
    pub schema_version: u32,
    pub start_time: DateTime<Utc>,
    pub resolution_secs: u32,
    pub utc_offset_secs: i32,
    pub values: Vec<f64>,
}

impl TryFrom<SeriesFile> for LoadSeries {
    type Error = IngestError;

    fn try_from(f: SeriesFile) -> Result<Self, IngestError> {
        if f.schema_version != SERIES_SCHEMA_VERSION {
            return Err(IngestError::InvalidSeries(format!(
                "unsupported series schema version {}",
                f.schema_version
            )));
        }
        let slots = (0..f.values.len() as u64).collect();
        LoadSeries::with_slots(f.start_time, f.resolution_secs, f.utc_offset_secs, f.values, slots)
    }
}

pub fn readings_per_day(resolution_secs: u32) -> Result<usize, IngestError> {
    if resolution_secs == 0 || SECONDS_PER_DAY % resolution_secs != 0 {
        return Err(IngestError::IncompatibleResolution(resolution_secs));
    }
    Ok((SECONDS_PER_DAY / resolution_secs) as usize)
}

/// One local calendar day of readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySample {
    pub day_index: NaiveDate,
    pub readings: Vec<f64>,
}

impl DaySample {
    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }
}

/// Fill interior gaps of at most `max_gap` missing slots by linear
/// interpolation between the neighbouring readings.
pub fn resample_and_fill(series: &LoadSeries, max_gap: u64) -> Result<LoadSeries, IngestError> {
    if series.is_gapless() {
        return Ok(series.clone());
    }
    let total = *series.slots.last().expect("non-empty") as usize + 1;
    let mut values = Vec::with_capacity(total);
    for i in 0..series.values.len() {
        let v = series.values[i];
        values.push(v);
        if let Some(&next_slot) = series.slots.get(i + 1) {
            let missing = next_slot - series.slots[i] - 1;
            if missing == 0 {
                continue;
            }
            if missing > max_gap {
                return Err(IngestError::GapTooLarge {
                    from: series.timestamp_of_slot(series.slots[i] + 1),
                    to: series.timestamp_of_slot(next_slot - 1),
                    missing,
                    max_gap,
                });
            }
            let next = series.values[i + 1];
            let span = (missing + 1) as f64;
            for k in 1..=missing {
                values.push(v + (next - v) * k as f64 / span);
            }
        }
    }
    let slots = (0..values.len() as u64).collect();
    LoadSeries::with_slots(
        series.start_time,
        series.resolution_secs,
        series.utc_offset_secs,
        values,
        slots,
    )
}

/// Complete days found in a series plus what had to be dropped at the edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub days: Vec<DaySample>,
    pub readings_per_day: usize,
    pub leading_dropped: usize,
    pub trailing_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub n_days: usize,
    pub readings_per_day: usize,
    pub leading_dropped: usize,
    pub trailing_dropped: usize,
    pub first_day: NaiveDate,
    pub last_day: NaiveDate,
}

impl Segmentation {
    pub fn report(&self) -> SegmentationReport {
        SegmentationReport {
            n_days: self.days.len(),
            readings_per_day: self.readings_per_day,
            leading_dropped: self.leading_dropped,
            trailing_dropped: self.trailing_dropped,
            first_day: self.days[0].day_index,
            last_day: self.days[self.days.len() - 1].day_index,
        }
    }
}

/// Cut a gapless series at local midnight into fixed-length days.
pub fn segment_days(series: &LoadSeries) -> Result<Segmentation, IngestError> {
    if !series.is_gapless() {
        return Err(IngestError::NotGapless);
    }
    let rpd = series.readings_per_day()?;
    let res = series.resolution_secs as i64;
    let offset = FixedOffset::east_opt(series.utc_offset_secs).expect("validated offset");
    let local_start = series.start_time.with_timezone(&offset);
    let secs_into_day = local_start.time().signed_duration_since(chrono::NaiveTime::MIN).num_seconds();
    let to_midnight = (SECONDS_PER_DAY as i64 - secs_into_day) % SECONDS_PER_DAY as i64;
    // first reading starting at or after local midnight
    let lead = ((to_midnight + res - 1) / res) as usize;
    let n = series.values.len();
    if lead >= n || (n - lead) < rpd {
        return Err(IngestError::NoCompleteDay);
    }
    let n_days = (n - lead) / rpd;
    let first_date = (local_start + Duration::seconds(lead as i64 * res)).date_naive();
    let days = (0..n_days)
        .map(|d| DaySample {
            day_index: first_date + Duration::days(d as i64),
            readings: series.values[lead + d * rpd..lead + (d + 1) * rpd].to_vec(),
        })
        .collect();
    Ok(Segmentation {
        days,
        readings_per_day: rpd,
        leading_dropped: lead,
        trailing_dropped: n - lead - n_days * rpd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction_of_train: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            validation_fraction_of_train: 1.0 / 6.0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        for (name, f) in [
            ("train_fraction", self.train_fraction),
            ("validation_fraction_of_train", self.validation_fraction_of_train),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(IngestError::InvalidSplit(format!("{name}={f} not in (0,1)")));
            }
        }
        Ok(())
    }
}

/// Chronological train / validation / test partition of days.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<DaySample>,
    pub validation: Vec<DaySample>,
    pub test: Vec<DaySample>,
}

impl DatasetSplit {
    /// Training plus validation days, in order.
    pub fn train_pool(&self) -> impl Iterator<Item = &DaySample> {
        self.train.iter().chain(&self.validation)
    }
}

pub const MIN_SPLIT_DAYS: usize = 8;

// floor() of products like 6 * (1/6) must not land one below the integer
fn floor_count(x: f64) -> usize {
    (x + 1e-9).floor() as usize
}

pub fn split_dataset(days: &[DaySample], spec: &SplitSpec) -> Result<DatasetSplit, IngestError> {
    spec.validate()?;
    if days.len() < MIN_SPLIT_DAYS {
        return Err(IngestError::TooFewDays {
            needed: MIN_SPLIT_DAYS,
            got: days.len(),
        });
    }
    let pool = floor_count(spec.train_fraction * days.len() as f64);
    let n_val = floor_count(pool as f64 * spec.validation_fraction_of_train);
    if pool == days.len() || n_val == 0 || n_val >= pool {
        return Err(IngestError::InvalidSplit(format!(
            "{} days give an empty partition under {spec:?}",
            days.len()
        )));
    }
    Ok(DatasetSplit {
        train: days[..pool - n_val].to_vec(),
        validation: days[pool - n_val..pool].to_vec(),
        test: days[pool..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2006, 6, 24, 0, 0, 0).unwrap()
    }

    fn series(n: usize) -> LoadSeries {
        LoadSeries::new(t0(), 600, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    fn days(n: usize) -> Vec<DaySample> {
        segment_days(&series(n * 144)).unwrap().days
    }

    #[test]
    fn series_file_and_csv_load_alike() {
        let dir = tempfile::tempdir().unwrap();
        let s = series(300);
        let json = dir.path().join("s.json");
        save_series(&s, &json).unwrap();
        let back = load_series(&json).unwrap();
        assert_eq!(back.content_hash(), s.content_hash());

        let csv = dir.path().join("s.csv");
        write_load_csv(&s, std::fs::File::create(&csv).unwrap()).unwrap();
        assert_eq!(load_series(&csv).unwrap().values(), s.values());
    }

    #[test]
    fn fills_single_missing_slot_with_midpoint() {
        let s = LoadSeries::with_slots(t0(), 600, 0, vec![1.0, 2.0], vec![0, 2]).unwrap();
        let filled = resample_and_fill(&s, 3).unwrap();
        assert_eq!(filled.values(), &[1.0, 1.5, 2.0]);
        assert!(filled.is_gapless());
    }

    #[test]
    fn gapless_series_is_unchanged_by_fill() {
        let s = series(10);
        assert_eq!(resample_and_fill(&s, 0).unwrap(), s);
    }

    #[test]
    fn gap_longer_than_max_is_rejected() {
        let s = LoadSeries::with_slots(t0(), 600, 0, vec![1.0, 2.0], vec![0, 6]).unwrap();
        match resample_and_fill(&s, 3) {
            Err(IngestError::GapTooLarge { missing, from, to, .. }) => {
                assert_eq!(missing, 5);
                assert_eq!(from, t0() + Duration::minutes(10));
                assert_eq!(to, t0() + Duration::minutes(50));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fill_is_idempotent() {
        let s = LoadSeries::with_slots(t0(), 600, 0, vec![1.0, 4.0, 2.0], vec![0, 3, 5]).unwrap();
        let once = resample_and_fill(&s, 5).unwrap();
        assert_eq!(resample_and_fill(&once, 5).unwrap(), once);
    }

    #[test]
    fn two_full_days_segment_cleanly() {
        let seg = segment_days(&series(288)).unwrap();
        assert_eq!(seg.days.len(), 2);
        assert!(seg.days.iter().all(|d| d.len() == 144));
        assert_eq!(seg.days[1].day_index, NaiveDate::from_ymd_opt(2006, 6, 25).unwrap());
    }

    #[test]
    fn trailing_partial_day_is_dropped_and_counted() {
        let seg = segment_days(&series(300)).unwrap();
        assert_eq!(seg.days.len(), 2);
        assert_eq!(seg.trailing_dropped, 12);
        assert_eq!(seg.leading_dropped, 0);
    }

    #[test]
    fn short_series_has_no_complete_day() {
        assert_eq!(segment_days(&series(100)), Err(IngestError::NoCompleteDay));
    }

    #[test]
    fn leading_partial_day_is_dropped_at_local_midnight() {
        // starts 23:00 UTC = 01:00 at +02:00, so 23h of the first local day are partial
        let start = Utc.with_ymd_and_hms(2006, 6, 23, 23, 0, 0).unwrap();
        let s = LoadSeries::new(start, 600, vec![1.0; 400])
            .unwrap()
            .with_utc_offset(7200)
            .unwrap();
        let seg = segment_days(&s).unwrap();
        assert_eq!(seg.leading_dropped, 138);
        assert_eq!(seg.days.len(), 1);
        assert_eq!(seg.days[0].day_index, NaiveDate::from_ymd_opt(2006, 6, 25).unwrap());
        assert_eq!(seg.trailing_dropped, 400 - 138 - 144);
    }

    #[test]
    fn hundred_days_split_75_25_with_sixth_validation() {
        let d = days(100);
        let s = split_dataset(&d, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (63, 12, 25));
    }

    #[test]
    fn eight_days_is_the_smallest_split() {
        let d = days(8);
        let s = split_dataset(&d, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (5, 1, 2));
        assert_eq!(
            split_dataset(&d[..4], &SplitSpec::default()),
            Err(IngestError::TooFewDays { needed: 8, got: 4 })
        );
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let d = days(10);
        let spec = SplitSpec {
            train_fraction: 1.0,
            validation_fraction_of_train: 0.2,
        };
        assert!(matches!(split_dataset(&d, &spec), Err(IngestError::InvalidSplit(_))));
    }

    #[test]
    fn content_hash_tracks_values() {
        let a = series(20);
        let mut v = a.values().to_vec();
        v[3] += 1e-12;
        let b = LoadSeries::new(t0(), 600, v).unwrap();
        assert_eq!(a.content_hash(), series(20).content_hash());
        assert_ne!(a.content_hash(), b.content_hash());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn segmentation_reproduces_interior(n in 144usize..900, lead_minutes in 0u32..144) {
                let start = t0() + Duration::minutes(lead_minutes as i64 * 10);
                let s = LoadSeries::new(start, 600, (0..n).map(|i| i as f64).collect()).unwrap();
                if let Ok(seg) = segment_days(&s) {
                    let joined: Vec<f64> = seg.days.iter().flat_map(|d| d.readings.clone()).collect();
                    let lo = seg.leading_dropped;
                    prop_assert_eq!(&joined[..], &s.values()[lo..lo + joined.len()]);
                    prop_assert_eq!(lo + joined.len() + seg.trailing_dropped, n);
                }
            }

            #[test]
            fn split_partitions_in_order(n in 8usize..60) {
                let d = days(n);
                let s = split_dataset(&d, &SplitSpec::default()).unwrap();
                let all: Vec<_> = s.train.iter().chain(&s.validation).chain(&s.test).cloned().collect();
                prop_assert_eq!(&all, &d);
                prop_assert!(s.train.last().unwrap().day_index < s.validation[0].day_index);
                prop_assert!(s.validation.last().unwrap().day_index < s.test[0].day_index);
            }
        }
    }
}
