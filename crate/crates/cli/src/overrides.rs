//! Run configuration loading with `key=value` overrides on dotted paths.

use std::path::Path;

use serde_json::Value;
use sleepformer::training::RunConfig;

use crate::error::CliError;

/// Splits `a.b=c` into the path and a JSON value; bare words become strings.
pub fn parse_override(raw: &str) -> Result<(String, Value), CliError> {
    let (key, value) =
        raw.split_once('=').ok_or_else(|| CliError::user(format!("override `{raw}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::user(format!("override `{raw}` has an empty key")));
    }
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.to_string(), value))
}

/// Replaces the value at a dotted path that already exists in `root`.
pub fn apply_override(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    for part in key.split('.') {
        cur = cur
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| CliError::user(format!("configuration error at `{key}`: unknown key")))?;
    }
    *cur = value;
    Ok(())
}

/// Dotted paths present in `given` but absent from `known`.
fn unknown_keys(given: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Some(g), Some(k)) = (given.as_object(), known.as_object()) else {
        return;
    };
    for (name, v) in g {
        let path = if prefix.is_empty() { name.clone() } else { format!("{prefix}.{name}") };
        match k.get(name) {
            Some(kv) => unknown_keys(v, kv, &path, out),
            None => out.push(path),
        }
    }
}

fn from_value(v: Value) -> Result<RunConfig, CliError> {
    serde_json::from_value(v).map_err(|e| CliError::user(format!("configuration error: {e}")))
}

/// Resolves a run configuration from an optional base, a JSON file and overrides.
pub fn resolve_config(
    base: RunConfig,
    path: Option<&Path>,
    overrides: &[String],
) -> Result<(RunConfig, Vec<(String, Value)>), CliError> {
    let mut value = serde_json::to_value(&base)?;
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::user(format!("{}: {e}", path.display())))?;
        let given: Value =
            serde_json::from_str(&text).map_err(|e| CliError::user(format!("{}: {e}", path.display())))?;
        let mut unknown = Vec::new();
        unknown_keys(&given, &value, "", &mut unknown);
        if let Some(k) = unknown.first() {
            return Err(CliError::user(format!("configuration error at `{k}`: unknown key")));
        }
        let mut merged = value.clone();
        merge(&mut merged, given);
        value = serde_json::to_value(from_value(merged)?)?;
    }
    let mut applied = Vec::new();
    for raw in overrides {
        let (key, v) = parse_override(raw)?;
        apply_override(&mut value, &key, v.clone())?;
        applied.push((key, v));
    }
    let config = from_value(value)?;
    config.validate()?;
    Ok((config, applied))
}

fn merge(dst: &mut Value, src: Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                match d.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        d.insert(k, v);
                    }
                }
            }
        }
        (d, s) => *d = s,
    }
}
