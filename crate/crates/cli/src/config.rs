//! Flat-key JSON config files merged under command-line flags.

use std::path::{Path, PathBuf};

use convsim::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const SEED_ENV: &str = "CONVSIM_SEED";

pub type ConfigFile = Map<String, Value>;

pub fn load_file(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::Config(format!("{}: expected a JSON object", path.display()))),
        Err(e) => Err(Error::Config(format!("{}: {e}", path.display()))),
    }
}

/// Overlays the flags that were actually given on top of the file values.
/// Keys the command does not know are ignored so one file can serve
/// several commands.
pub fn merge<T: Serialize + DeserializeOwned>(file: Option<&ConfigFile>, flags: &T) -> Result<T> {
    let mut merged = file.cloned().unwrap_or_default();
    match serde_json::to_value(flags).map_err(|e| Error::Config(e.to_string()))? {
        Value::Object(given) => {
            for (k, v) in given {
                if !v.is_null() && v != Value::Bool(false) {
                    merged.insert(k, v);
                }
            }
        }
        _ => unreachable!("argument structs serialize to objects"),
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(format!("config: {e}")))
}

pub fn require<T: Clone>(value: &Option<T>, key: &str) -> Result<T> {
    value.clone().ok_or_else(|| {
        Error::Config(format!("missing required `{key}` (flag --{} or config key)", key.replace('_', "-")))
    })
}

/// A required input file: absent or nonexistent paths are usage errors.
pub fn input_path(value: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let path = require(value, key)?;
    if path.as_os_str() != "-" && !path.exists() {
        return Err(Error::Config(format!("{key}: {} does not exist", path.display())));
    }
    Ok(path)
}

pub fn optional_input(value: &Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
    match value {
        Some(_) => input_path(value, key).map(Some),
        None => Ok(None),
    }
}

/// Flag or config value, else `CONVSIM_SEED`, else 0.
pub fn resolve_seed(value: Option<u64>) -> Result<u64> {
    if let Some(s) = value {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Args {
        steps: Option<usize>,
        lr: Option<f64>,
        verbose: bool,
    }

    fn file(v: Value) -> ConfigFile {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn flags_override_file_values() {
        let f = file(serde_json::json!({"steps": 50, "lr": 0.5, "unrelated": "x"}));
        let flags = Args { steps: Some(20), ..Default::default() };
        let merged = merge(Some(&f), &flags).unwrap();
        assert_eq!(merged, Args { steps: Some(20), lr: Some(0.5), verbose: false });
    }

    #[test]
    fn unset_boolean_flag_keeps_file_value() {
        let f = file(serde_json::json!({"verbose": true}));
        assert!(merge(Some(&f), &Args::default()).unwrap().verbose);
    }

    #[test]
    fn ill_typed_file_value_is_a_usage_error() {
        let f = file(serde_json::json!({"steps": "many"}));
        let err = merge(Some(&f), &Args::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn missing_required_value_is_a_usage_error() {
        let err = require::<usize>(&None, "total_steps").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("--total-steps"));
    }
}
