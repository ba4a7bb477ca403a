//! Config files, flag overlays and resolved-config snapshots.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Invalid invocation; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

/// Parses a TOML or JSON config file into a JSON object.
fn read_config(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?
    } else {
        let t: toml::Value = toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t)?
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => usage(format!("{}: config must be a table", path.display())),
    }
}

/// Command-line values override file values. Absent options and unset
/// switches on the command line leave the file value in place.
pub fn resolve<T: Serialize + DeserializeOwned>(command: &str, flags: &T, file: Option<&Path>) -> Result<T> {
    let mut merged = match file {
        Some(path) => {
            let mut m = read_config(path)?;
            match m.remove("command") {
                Some(Value::String(c)) if c != command => {
                    return usage(format!("{} is a config for `{c}`, not `{command}`", path.display()))
                }
                _ => {}
            }
            // reject unknown keys before overlaying
            serde_json::from_value::<T>(Value::Object(m.clone()))
                .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
            m
        }
        None => Map::new(),
    };
    let Value::Object(over) = serde_json::to_value(flags)? else {
        unreachable!("command arguments serialize to an object")
    };
    for (k, v) in over {
        match v {
            Value::Null | Value::Bool(false) => {}
            v => {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| UsageError(e.to_string()).into())
}

/// `<output>.resolved.toml`, next to the output.
pub fn snapshot_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".resolved.toml");
    output.with_file_name(name)
}

/// Writes the resolved config as TOML, tagged with its command.
pub fn write_snapshot<T: Serialize>(command: &str, config: &T, output: &Path) -> Result<PathBuf> {
    let Value::Object(m) = serde_json::to_value(config)? else {
        unreachable!("command arguments serialize to an object")
    };
    let mut table = toml::map::Map::new();
    table.insert("command".into(), toml::Value::String(command.into()));
    for (k, v) in m {
        if let Some(t) = json_to_toml(v) {
            table.insert(k, t);
        }
    }
    let path = snapshot_path(output);
    fs::write(&path, toml::to_string(&table)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn json_to_toml(v: Value) -> Option<toml::Value> {
    Some(match v {
        Value::Null => return None,
        Value::Bool(b) => toml::Value::Boolean(b),
        Value::Number(n) => match n.as_i64() {
            Some(i) => toml::Value::Integer(i),
            None => toml::Value::Float(n.as_f64()?),
        },
        Value::String(s) => toml::Value::String(s),
        Value::Array(a) => toml::Value::Array(a.into_iter().filter_map(json_to_toml).collect()),
        Value::Object(o) => toml::Value::Table(o.into_iter().filter_map(|(k, v)| Some((k, json_to_toml(v)?))).collect()),
    })
}
