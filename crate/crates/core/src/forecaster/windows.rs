use super::{ForecastError, ForecastModel, SupervisedWindow};
use crate::ingest::DaySample;

/// All windows of `input_len` readings followed by `horizon` targets, taken
/// every `stride` readings (a stride of 0 is treated as 1).
pub fn build_windows(series: &[f64], input_len: usize, horizon: usize, stride: usize) -> Vec<SupervisedWindow> {
    let span = input_len + horizon;
    if input_len == 0 || horizon == 0 || series.len() < span {
        return Vec::new();
    }
    (0..=series.len() - span)
        .step_by(stride.max(1))
        .map(|s| SupervisedWindow {
            input: series[s..s + input_len].to_vec(),
            target: series[s + input_len..s + span].to_vec(),
        })
        .collect()
}

fn steps_per_hour(readings_per_day: usize) -> Result<usize, ForecastError> {
    if readings_per_day == 0 || readings_per_day % 24 != 0 {
        return Err(ForecastError::UnsupportedDayLength(readings_per_day));
    }
    Ok(readings_per_day / 24)
}

/// One forecast per hour of `day`, each from the `input_len` readings before
/// that hour, in kWh.
pub fn predict_day(model: &ForecastModel, context: &[f64], day: &DaySample) -> Result<Vec<Vec<f64>>, ForecastError> {
    let sph = steps_per_hour(day.readings.len())?;
    let k = model.input_len;
    if context.len() < k {
        return Err(ForecastError::InsufficientContext { needed: k, got: context.len() });
    }
    let mut buf = Vec::with_capacity(k + day.readings.len());
    buf.extend_from_slice(&context[context.len() - k..]);
    buf.extend_from_slice(&day.readings);
    (0..24).map(|h| model.predict_raw(&buf[h * sph..h * sph + k])).collect()
}

/// Each hour forecast as the same readings one day earlier.
pub fn seasonal_naive(context: &[f64], readings_per_day: usize, horizon: usize) -> Result<Vec<Vec<f64>>, ForecastError> {
    let sph = steps_per_hour(readings_per_day)?;
    if context.len() < readings_per_day {
        return Err(ForecastError::InsufficientContext { needed: readings_per_day, got: context.len() });
    }
    let prev = &context[context.len() - readings_per_day..];
    Ok((0..24)
        .map(|h| (0..horizon).map(|j| prev[(h * sph + j) % readings_per_day]).collect())
        .collect())
}
