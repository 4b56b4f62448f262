//! Flat TOML settings with command-line overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::Failure;

/// Parses a `key=value` override; the value is read as TOML, falling back to a bare string.
pub fn parse_override(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in {s:?}"));
    }
    let value = format!("v = {}", v.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.trim().to_string()));
    Ok((k.to_string(), value))
}

#[derive(Default)]
pub struct Overrides(Vec<(String, Value)>);

impl Overrides {
    pub fn new(set: &[(String, Value)]) -> Self {
        Self(set.to_vec())
    }

    /// Records a flag value; explicit flags win over `--set`.
    pub fn flag<V: Into<Value>>(&mut self, key: &str, v: Option<V>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key.to_string(), v.into()));
        }
        self
    }
}

/// Loads `T` from an optional config file, applies overrides and rejects unknown keys.
pub fn load<T>(file: Option<&Path>, overrides: &Overrides) -> Result<T, Failure>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::io(format!("{}: {e}", p.display())))?;
            text.parse::<Table>()
                .map_err(|e| Failure::validation(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for (k, v) in &overrides.0 {
        table.insert(k.clone(), v.clone());
    }
    let known = match serde_json::to_value(T::default()) {
        Ok(serde_json::Value::Object(m)) => m.into_iter().map(|(k, _)| k).collect::<Vec<_>>(),
        _ => Vec::new(),
    };
    if let Some(k) = table.keys().find(|k| !known.contains(k)) {
        return Err(Failure::validation(format!("unknown key `{k}` (known keys: {})", known.join(", "))));
    }
    Value::Table(table.clone()).try_into().map_err(|e: toml::de::Error| {
        // Every key is optional, so each can be checked on its own to name the culprit.
        let culprit = table.iter().find(|(k, v)| {
            let single = Table::from_iter([((*k).clone(), (*v).clone())]);
            Value::Table(single).try_into::<T>().is_err()
        });
        match culprit {
            Some((k, _)) => Failure::validation(format!("{k}: {}", e.message())),
            None => Failure::validation(e.message().to_string()),
        }
    })
}
