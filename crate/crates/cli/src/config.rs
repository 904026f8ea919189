//! Flat dotted-key configuration: defaults, then a JSON file, then flags.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Bumped whenever a key is renamed or its meaning changes.
pub const CONFIG_SCHEMA: u64 = 1;
const SCHEMA_KEY: &str = "config_schema";

pub type Flat = BTreeMap<String, Value>;

fn flatten_into(prefix: &str, v: &Value, out: &mut Flat) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, x) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(&key, x, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

pub fn flatten(v: &Value) -> Flat {
    let mut out = Flat::new();
    flatten_into("", v, &mut out);
    out
}

pub fn unflatten(flat: &Flat) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("dotted keys never collide with leaves");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Parses a flag value: JSON when it parses, a bare string otherwise.
pub fn parse_value(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string()))
}

/// Splits `key=value` pairs given with `--set`.
pub fn parse_sets(sets: &[String]) -> Result<Vec<(String, Value)>, CliError> {
    sets.iter()
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{s}'")))?;
            Ok((k.trim().to_string(), parse_value(v.trim())))
        })
        .collect()
}

fn set(flat: &mut Flat, key: &str, v: Value, source: &str) -> Result<(), CliError> {
    let Some(current) = flat.get(key) else {
        return Err(CliError::Usage(format!(
            "{source}: unknown configuration key '{key}'"
        )));
    };
    let compatible = matches!(
        (current, &v),
        (Value::Null, _)
            | (_, Value::Null)
            | (Value::Bool(_), Value::Bool(_))
            | (Value::Number(_), Value::Number(_))
            | (Value::String(_), Value::String(_))
            | (Value::Array(_), Value::Array(_))
    );
    if !compatible {
        return Err(CliError::Usage(format!(
            "{source}: key '{key}' expects {}, got {}",
            kind(current),
            kind(&v)
        )));
    }
    flat.insert(key.to_string(), v);
    Ok(())
}

/// Resolves `defaults` with the optional config file and then `overrides`
/// (later entries win). Returns the typed value and its flat form.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Path>,
    overrides: &[(String, Value)],
) -> Result<(T, Flat), CliError> {
    let mut flat =
        flatten(&serde_json::to_value(defaults).map_err(|e| CliError::Compute(e.to_string()))?);
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let parsed: Value = serde_json::from_str(&text).map_err(|e| {
            CliError::Usage(format!("config {} is not valid JSON: {e}", path.display()))
        })?;
        if !parsed.is_object() {
            return Err(CliError::Usage(format!(
                "config {} must be a JSON object",
                path.display()
            )));
        }
        let source = path.display().to_string();
        for (k, v) in flatten(&parsed) {
            if k == SCHEMA_KEY {
                if v != CONFIG_SCHEMA {
                    return Err(CliError::Usage(format!(
                        "{source}: config schema {v} is not supported (expected {CONFIG_SCHEMA})"
                    )));
                }
                continue;
            }
            set(&mut flat, &k, v, &source)?;
        }
    }
    for (k, v) in overrides {
        set(&mut flat, k, v.clone(), "command line")?;
    }
    let value = serde_json::from_value(unflatten(&flat))
        .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    Ok((value, flat))
}

/// Pretty JSON of the flat map plus the schema tag, newline-terminated.
pub fn resolved_json(flat: &Flat) -> String {
    let mut m = flat.clone();
    m.insert(SCHEMA_KEY.to_string(), Value::from(CONFIG_SCHEMA));
    let mut s = serde_json::to_string_pretty(&m).expect("JSON values always serialize");
    s.push('\n');
    s
}
