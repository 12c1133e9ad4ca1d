//! JSON configuration files and run manifests.
//!
//! A command's resolved configuration starts from its defaults, is overlaid
//! with the `--config` file (unknown keys rejected, objects merged key by
//! key) and finally with explicit flags. A run manifest can itself be passed
//! as `--config`; its recorded configuration is used.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, SystemTime};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use shadekit::datakit::write_atomic;
use shadekit::models::TrainHistory;

use crate::error::{runtime, usage, Result};

pub const TOOL: &str = "shadekit";

/// Default seed when neither flags nor config set one.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub timestamp: String,
    pub config: Value,
    /// Content hash of every dataset the run read or wrote, by role.
    pub dataset_hash: BTreeMap<String, String>,
    pub history: Option<TrainHistory>,
    pub metrics: Option<Value>,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, started: SystemTime, elapsed: Duration) -> Self {
        RunManifest {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            timestamp: humantime::format_rfc3339_seconds(started).to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            dataset_hash: BTreeMap::new(),
            history: None,
            metrics: None,
            duration_secs: elapsed.as_secs_f64(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| runtime(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Overlays `patch` onto `base`, refusing keys that `base` does not have.
fn merge(base: &mut Value, patch: Value, at: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None => return Err(usage(format!("unknown config key '{path}'"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Applies the optional config file on top of `defaults`.
pub fn resolve<C: Serialize + DeserializeOwned>(defaults: C, file: Option<&Path>, command: &str) -> Result<C> {
    let Some(file) = file else {
        return Ok(defaults);
    };
    let mut patch = read_json(file)?;
    if patch.get("tool").and_then(Value::as_str) == Some(TOOL) {
        let manifest: RunManifest =
            serde_json::from_value(patch).map_err(|e| usage(format!("{}: {e}", file.display())))?;
        if manifest.command != command {
            return Err(usage(format!(
                "{} records a '{}' run, not '{command}'",
                file.display(),
                manifest.command
            )));
        }
        patch = manifest.config;
    }
    let mut base = serde_json::to_value(&defaults).expect("config serializes");
    merge(&mut base, patch, "")?;
    serde_json::from_value(base).map_err(|e| usage(format!("{}: {e}", file.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Cfg {
        seed: u64,
        inner: Inner,
        out: Option<String>,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Inner {
        a: f64,
        b: f64,
    }

    fn defaults() -> Cfg {
        Cfg {
            seed: 1,
            inner: Inner { a: 1.0, b: 2.0 },
            out: None,
        }
    }

    #[test]
    fn nested_keys_merge_and_unknown_keys_fail() {
        let mut v = serde_json::to_value(defaults()).unwrap();
        merge(&mut v, json!({"inner": {"b": 5.0}, "out": "x"}), "").unwrap();
        let c: Cfg = serde_json::from_value(v).unwrap();
        assert_eq!(c.inner, Inner { a: 1.0, b: 5.0 });
        assert_eq!(c.out.as_deref(), Some("x"));
        let mut v = serde_json::to_value(defaults()).unwrap();
        let err = merge(&mut v, json!({"inner": {"c": 1}}), "").unwrap_err();
        assert!(err.to_string().contains("inner.c"));
    }
}
