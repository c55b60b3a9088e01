//! JSON model checkpoints. Floats are written in shortest round-trip form, so
//! a save/load cycle reproduces every weight bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ForecastError, ForecastModel};
use crate::error::Error;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    schema_version: u32,
    model: ForecastModel,
}

pub fn to_json(model: &ForecastModel) -> String {
    serde_json::to_string(&Checkpoint { schema_version: CHECKPOINT_SCHEMA_VERSION, model: model.clone() })
        .expect("model serializes")
}

pub fn from_json(text: &str) -> Result<ForecastModel, ForecastError> {
    let c: Checkpoint = serde_json::from_str(text).map_err(|e| ForecastError::InvalidCheckpoint(e.to_string()))?;
    if c.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(ForecastError::InvalidCheckpoint(format!(
            "schema version {} (expected {CHECKPOINT_SCHEMA_VERSION})",
            c.schema_version
        )));
    }
    c.model.check_shape()?;
    Ok(c.model)
}

pub fn save_checkpoint(model: &ForecastModel, path: impl AsRef<Path>) -> crate::Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> crate::Result<ForecastModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(from_json(&text)?)
}
