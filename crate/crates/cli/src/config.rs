//! Flat `key = value` configuration files with per-command sections.
//!
//! ```text
//! # applies to every command
//! seed = 7
//!
//! [train-cf]
//! lr = 0.01
//! ```
//!
//! Keys before the first section header are shared. Command-line flags win
//! over the file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{io_err, CliError, CliResult};

/// Parsed file: section name (empty for the shared block) to its entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(CliError::usage(format!("config line {}: empty key", n + 1)));
            }
            sections.entry(current.clone()).or_default().insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { sections })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
    }

    /// Shared entries overlaid with the `command` section.
    pub fn for_command(&self, command: &str) -> BTreeMap<String, String> {
        let mut out = self.sections.get("").cloned().unwrap_or_default();
        if let Some(s) = self.sections.get(command) {
            out.extend(s.clone());
        }
        out
    }
}

/// Key-value settings after merging file and flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Settings {
    pub fn resolve(file: Option<&Path>, command: &str, flags: Vec<(String, String)>) -> CliResult<Self> {
        let mut values = match file {
            Some(p) => ConfigFile::load(p)?.for_command(command),
            None => BTreeMap::new(),
        };
        for (k, v) in flags {
            values.insert(k, v);
        }
        Ok(Self { values, used: BTreeSet::new() })
    }

    pub fn from_pairs<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        Self { values: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect(), used: BTreeSet::new() }
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.values.remove(key)
    }

    /// Builds `T` from its defaults, replacing every field named in the settings.
    pub fn typed<T: Serialize + DeserializeOwned + Default>(&mut self) -> CliResult<T> {
        let mut obj = match serde_json::to_value(T::default())? {
            Value::Object(m) => m,
            _ => return Err(CliError::usage("settings target is not a struct")),
        };
        for (k, slot) in obj.iter_mut() {
            let Some(raw) = self.values.get(k) else { continue };
            self.used.insert(k.clone());
            *slot = parse_like(slot, raw).ok_or_else(|| CliError::usage(format!("invalid value for `{k}`: {raw}")))?;
        }
        serde_json::from_value(Value::Object(obj)).map_err(|e| CliError::usage(e.to_string()))
    }

    /// Fails on keys no consumer asked for.
    pub fn finish(&self) -> CliResult<()> {
        let unknown: Vec<&str> =
            self.values.keys().filter(|k| !self.used.contains(*k)).map(|k| k.as_str()).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::usage(format!("unknown setting(s): {}", unknown.join(", "))))
        }
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

fn parse_like(template: &Value, raw: &str) -> Option<Value> {
    match template {
        Value::Bool(_) => raw.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => raw.parse::<u64>().ok().map(Value::from),
        Value::Number(_) => raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(Value::from),
        Value::String(_) => Some(Value::String(raw.to_string())),
        _ => serde_json::from_str(raw).ok(),
    }
}

/// Comma-separated list.
pub fn parse_list<T: std::str::FromStr>(key: &str, raw: &str) -> CliResult<Vec<T>> {
    raw.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| CliError::usage(format!("invalid entry in `{key}`: {s}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use complat_core::train::TrainConfig;

    #[test]
    fn sections_and_shared_keys() {
        let f = ConfigFile::parse("seed = 3\n# c\n[train-cf]\nlr = 0.5 # tail\n[probe]\nseed = 9\n").unwrap();
        let cf = f.for_command("train-cf");
        assert_eq!(cf.get("seed").map(String::as_str), Some("3"));
        assert_eq!(cf.get("lr").map(String::as_str), Some("0.5"));
        assert_eq!(f.for_command("probe").get("seed").map(String::as_str), Some("9"));
        assert!(ConfigFile::parse("novalue\n").is_err());
    }

    #[test]
    fn typed_overlay_and_unknown_keys() {
        let mut s = Settings::from_pairs([("lr", "0.01"), ("dim", "8"), ("use_bias", "false")]);
        let cfg: TrainConfig = s.typed().unwrap();
        assert_eq!((cfg.lr, cfg.dim, cfg.use_bias), (0.01, 8, false));
        assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);
        s.finish().unwrap();
        let mut bad = Settings::from_pairs([("dim", "x")]);
        assert!(bad.typed::<TrainConfig>().is_err());
        let mut extra = Settings::from_pairs([("nope", "1")]);
        let _: TrainConfig = extra.typed().unwrap();
        assert!(extra.finish().is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list::<usize>("k", "5, 10,20").unwrap(), vec![5, 10, 20]);
        assert!(parse_list::<usize>("k", "5,x").is_err());
    }
}
