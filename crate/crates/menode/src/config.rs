//! Flat `key = value` configuration files.
//!
//! Keys are the field names of the model, training and data-generation
//! settings. Blank lines and `#` comments are ignored. Lists are written
//! comma-separated (`encoder_hidden = 32,32`); an empty value is an empty list.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{AppError, Result};

/// Keys understood outside the serialised structs.
pub const EXTRA_KEYS: &[&str] = &["n_groups", "n_candidates", "n_perms", "h", "sde_paths"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AppError::Usage(format!("config line {}: expected key = value", i + 1)))?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(AppError::Usage(format!("config line {}: duplicate key {key:?}", i + 1)));
            }
        }
        Ok(ConfigFile { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| AppError::MissingFile {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// Parses an extra key with `FromStr`.
    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| AppError::Usage(format!("config line {line}: bad value {v:?} for {key}"))),
        }
    }

    /// Fails on keys that none of `known` structs nor [`EXTRA_KEYS`] accept.
    pub fn check_keys(&self, known: &BTreeSet<String>) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !known.contains(k) && !EXTRA_KEYS.contains(&k.as_str()) {
                return Err(AppError::Usage(format!("config line {line}: unknown key {k:?}")));
            }
        }
        Ok(())
    }

    /// Overwrites the fields of `base` named in the file, keeping the field's
    /// type. Keys that are not fields of `T` are left alone.
    pub fn overlay<T: Serialize + DeserializeOwned>(&self, base: &T) -> Result<T> {
        let mut value = serde_json::to_value(base).map_err(|e| AppError::Usage(e.to_string()))?;
        let Value::Object(fields) = &mut value else {
            return Err(AppError::Usage("settings must be a struct".into()));
        };
        for (key, (line, raw)) in &self.entries {
            if let Some(slot) = fields.get_mut(key) {
                *slot = convert(slot, raw).map_err(|msg| {
                    AppError::Usage(format!("config line {line}: {key}: {msg}"))
                })?;
            }
        }
        serde_json::from_value(value).map_err(|e| AppError::Usage(format!("config: {e}")))
    }
}

/// Field names of a serialisable struct.
pub fn field_names<T: Serialize>(v: &T) -> Vec<String> {
    match serde_json::to_value(v) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

fn convert(like: &Value, raw: &str) -> std::result::Result<Value, String> {
    match like {
        Value::Bool(_) => raw
            .parse::<bool>()
            .map(Value::Bool)
            .map_err(|_| format!("expected true or false, got {raw:?}")),
        Value::Number(n) if n.is_u64() => raw
            .parse::<u64>()
            .map(Value::from)
            .map_err(|_| format!("expected a non-negative integer, got {raw:?}")),
        Value::Number(_) => raw
            .parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
            .map(Value::Number)
            .ok_or_else(|| format!("expected a finite number, got {raw:?}")),
        Value::String(_) => Ok(Value::String(raw.to_string())),
        Value::Array(_) => {
            if raw.is_empty() {
                return Ok(Value::Array(Vec::new()));
            }
            raw.split(',')
                .map(|s| s.trim().parse::<u64>().map(Value::from))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Value::Array)
                .map_err(|_| format!("expected comma-separated integers, got {raw:?}"))
        }
        _ => Err("this field cannot be set from a config file".into()),
    }
}
