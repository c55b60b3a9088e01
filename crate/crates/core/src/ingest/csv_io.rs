use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, FixedOffset, NaiveDateTime, Utc};

use super::{IngestError, LoadSeries, DEFAULT_RESOLUTION_SECS};
use crate::error::{Error, Result};

/// Column names of the two-column consumption CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub timestamp_column: String,
    pub value_column: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp_column: "timestamp".into(),
            value_column: "consumption_kwh".into(),
        }
    }
}

pub fn parse_load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LoadSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_load_csv_reader(file, schema)?)
}

const NAIVE_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

/// Timestamps without an offset are read as UTC.
fn parse_timestamp(raw: &str) -> Option<DateTime<FixedOffset>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t);
    }
    NAIVE_FORMATS.iter().find_map(|fmt| {
        NaiveDateTime::parse_from_str(raw, fmt)
            .ok()
            .map(|n| n.and_utc().fixed_offset())
    })
}

/// Parse a consumption CSV. Rows must be strictly increasing in time and lie
/// on a common grid; the resolution is the most frequent gap between rows.
/// Missing grid slots are kept as gaps for [`super::resample_and_fill`].
pub fn parse_load_csv_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<LoadSeries, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::UnparseableRow { line: 1, reason: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| IngestError::UnparseableRow {
            line: 1,
            reason: format!("missing column `{name}`"),
        })
    };
    let (ts_col, val_col) = (col(&schema.timestamp_column)?, col(&schema.value_column)?);

    let mut rows: Vec<(usize, DateTime<FixedOffset>, f64)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| IngestError::UnparseableRow { line, reason: e.to_string() })?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let ts = parse_timestamp(field(ts_col)).ok_or_else(|| IngestError::UnparseableRow {
            line,
            reason: format!("bad timestamp `{}`", field(ts_col)),
        })?;
        let value: f64 = field(val_col).parse().map_err(|_| IngestError::UnparseableRow {
            line,
            reason: format!("bad reading `{}`", field(val_col)),
        })?;
        if !value.is_finite() {
            return Err(IngestError::UnparseableRow { line, reason: "non-finite reading".into() });
        }
        if value < 0.0 {
            return Err(IngestError::NegativeReading { line, value });
        }
        if let Some((_, prev, _)) = rows.last() {
            if ts <= *prev {
                return Err(IngestError::NonMonotoneTimestamps { line });
            }
        }
        rows.push((line, ts, value));
    }
    let Some(&(_, first, _)) = rows.first() else {
        return Err(IngestError::EmptySeries);
    };

    let resolution = modal_gap_secs(&rows).unwrap_or(DEFAULT_RESOLUTION_SECS as i64);
    let start = first.with_timezone(&Utc);
    let mut slots = Vec::with_capacity(rows.len());
    for &(line, ts, _) in &rows {
        let secs = (ts.with_timezone(&Utc) - start).num_seconds();
        if secs % resolution != 0 {
            return Err(IngestError::MisalignedTimestamp { line, resolution_secs: resolution as u32 });
        }
        slots.push((secs / resolution) as u64);
    }
    let values = rows.iter().map(|r| r.2).collect();
    LoadSeries::with_slots(start, resolution as u32, first.offset().local_minus_utc(), values, slots)
}

fn modal_gap_secs(rows: &[(usize, DateTime<FixedOffset>, f64)]) -> Option<i64> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for w in rows.windows(2) {
        *counts.entry((w[1].1 - w[0].1).num_seconds()).or_default() += 1;
    }
    // ties go to the smallest gap (BTreeMap iterates ascending)
    counts
        .into_iter()
        .fold(None, |best: Option<(i64, usize)>, (gap, n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((gap, n)),
        })
        .map(|(gap, _)| gap)
}

/// Write a series in the input CSV format, timestamps carrying the series'
/// UTC offset.
pub fn write_load_csv<W: Write>(series: &LoadSeries, writer: W) -> Result<(), csv::Error> {
    let offset = FixedOffset::east_opt(series.utc_offset_secs()).expect("validated offset");
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "consumption_kwh"])?;
    for (&slot, v) in series.slots().iter().zip(series.values()) {
        let ts = series.timestamp_of_slot(slot).with_timezone(&offset);
        w.write_record([ts.to_rfc3339(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LoadSeries, IngestError> {
        parse_load_csv_reader(text.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn parses_three_rows_at_ten_minutes() {
        let s = parse(
            "timestamp,consumption_kwh\n\
             2006-06-24T00:00:00Z,0.5\n\
             2006-06-24T00:10:00Z,0.7\n\
             2006-06-24T00:20:00Z,0.6\n",
        )
        .unwrap();
        assert_eq!(s.values(), &[0.5, 0.7, 0.6]);
        assert_eq!(s.resolution_secs(), 600);
        assert!(s.is_gapless());
    }

    #[test]
    fn header_only_is_empty() {
        assert_eq!(parse("timestamp,consumption_kwh\n"), Err(IngestError::EmptySeries));
    }

    #[test]
    fn repeated_timestamp_is_non_monotone() {
        let r = parse(
            "timestamp,consumption_kwh\n\
             2006-06-24T00:00:00Z,0.5\n\
             2006-06-24T00:10:00Z,0.7\n\
             2006-06-24T00:10:00Z,0.6\n",
        );
        assert_eq!(r, Err(IngestError::NonMonotoneTimestamps { line: 4 }));
    }

    #[test]
    fn negative_and_garbage_rows_report_their_line() {
        let neg = parse("timestamp,consumption_kwh\n2006-06-24 00:00:00,-1\n");
        assert_eq!(neg, Err(IngestError::NegativeReading { line: 2, value: -1.0 }));
        let bad = parse("timestamp,consumption_kwh\n2006-06-24 00:00:00,1\nyesterday,2\n");
        assert!(matches!(bad, Err(IngestError::UnparseableRow { line: 3, .. })));
    }

    #[test]
    fn modal_gap_keeps_missing_slots_as_gaps() {
        let s = parse(
            "timestamp,consumption_kwh\n\
             2006-06-24T00:00:00+02:00,1\n\
             2006-06-24T00:10:00+02:00,1\n\
             2006-06-24T00:20:00+02:00,1\n\
             2006-06-24T00:50:00+02:00,1\n",
        )
        .unwrap();
        assert_eq!(s.resolution_secs(), 600);
        assert_eq!(s.slots(), &[0, 1, 2, 5]);
        assert_eq!(s.utc_offset_secs(), 7200);
    }

    #[test]
    fn written_csv_parses_back() {
        let s = parse(
            "timestamp,consumption_kwh\n\
             2006-06-24T00:00:00+01:00,0.1\n\
             2006-06-24T00:10:00+01:00,0.30000000000000004\n",
        )
        .unwrap();
        let mut buf = Vec::new();
        write_load_csv(&s, &mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), s);
    }
}
