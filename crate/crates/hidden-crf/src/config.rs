use std::path::Path;

use hidden_crf_core::TrainConfig;

use crate::atomic::read_to_string;
use crate::error::{CliError, Result};

/// Reads a training configuration. Missing fields take their defaults;
/// unknown fields are rejected.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    parse_train_config(&read_to_string(path)?).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_train_config(text: &str) -> serde_json::Result<TrainConfig> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    check_keys(&value, &serde_json::to_value(TrainConfig::default())?)?;
    serde_json::from_value(value)
}

/// Rejects keys absent from the reference object, recursing into objects
/// whose reference has a fixed set of keys.
fn check_keys(value: &serde_json::Value, reference: &serde_json::Value) -> serde_json::Result<()> {
    use serde::de::Error;
    let (Some(obj), Some(refobj)) = (value.as_object(), reference.as_object()) else {
        return Ok(());
    };
    for (k, v) in obj {
        match refobj.get(k) {
            None if k == "kind" || refobj.contains_key("kind") => {}
            None => return Err(serde_json::Error::custom(format!("unknown field `{k}`"))),
            Some(r) => check_keys(v, r)?,
        }
    }
    Ok(())
}
