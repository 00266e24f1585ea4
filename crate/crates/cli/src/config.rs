//! JSON run configuration with `--key value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use hpl::HyperParams;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Keys that are paths; relative values in a config file resolve against the
/// file's directory, values given on the command line against the working
/// directory.
const PATH_KEYS: [&str; 2] = ["manifest", "output"];

/// Reads the optional config file and applies the overrides on top.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Map<String, Value>, CliError> {
    let mut map = match path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let value: Value = serde_json::from_str(&text).map_err(|e| {
                CliError::validation(format!("{}: invalid JSON: {e}", path.display()))
            })?;
            let Value::Object(mut map) = value else {
                return Err(CliError::validation(format!(
                    "{}: config must be a JSON object",
                    path.display()
                )));
            };
            let base = path.parent().unwrap_or(Path::new(""));
            for key in PATH_KEYS {
                if let Some(Value::String(p)) = map.get(key) {
                    let resolved = base.join(p);
                    map.insert(key.into(), Value::String(resolved.display().to_string()));
                }
            }
            map
        }
        None => Map::new(),
    };
    apply_overrides(&mut map, overrides)?;
    Ok(map)
}

/// Applies `--key value` / `--key=value` pairs. Values are parsed as JSON when
/// possible and kept as strings otherwise; dotted keys address nested objects.
pub fn apply_overrides(map: &mut Map<String, Value>, args: &[String]) -> Result<(), CliError> {
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(CliError::validation(format!("expected --key, got {arg:?}")));
        };
        let (key, raw) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::validation(format!("--{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        let key = key.replace('-', "_");
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        set_path(map, &key, value)?;
    }
    Ok(())
}

fn set_path(map: &mut Map<String, Value>, key: &str, value: Value) -> Result<(), CliError> {
    match key.split_once('.') {
        None => {
            map.insert(key.into(), value);
            Ok(())
        }
        Some((head, rest)) => {
            let entry = map
                .entry(head.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            match entry {
                Value::Object(inner) => set_path(inner, rest, value),
                _ => Err(CliError::validation(format!("{head} is not an object"))),
            }
        }
    }
}

/// Removes `key` and requires it to be a string path.
pub fn take_path(map: &mut Map<String, Value>, key: &str) -> Result<PathBuf, CliError> {
    match map.remove(key) {
        Some(Value::String(s)) => Ok(PathBuf::from(s)),
        Some(other) => Err(CliError::validation(format!(
            "{key} must be a path, got {other}"
        ))),
        None => Err(CliError::validation(format!(
            "missing required field {key}"
        ))),
    }
}

pub fn take_usize(
    map: &mut Map<String, Value>,
    key: &str,
    default: usize,
) -> Result<usize, CliError> {
    match map.remove(key) {
        None => Ok(default),
        Some(v) => v.as_u64().map(|v| v as usize).ok_or_else(|| {
            CliError::validation(format!("{key} must be a nonnegative integer, got {v}"))
        }),
    }
}

/// Deserializes and validates the remaining keys as hyperparameters.
pub fn hyperparams(map: Map<String, Value>) -> Result<HyperParams, CliError> {
    let hp: HyperParams = serde_json::from_value(Value::Object(map))
        .map_err(|e| CliError::validation(format!("invalid hyperparameters: {e}")))?;
    hp.validate()?;
    Ok(hp)
}
