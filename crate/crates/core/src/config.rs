//! Run configuration: every module's parameters under one namespaced,
//! serializable snapshot (`camera.*`, `lidar.*`, `solver.*`, `sim.*`).
//!
//! Files are TOML, either with `[section]` tables or flat dotted keys.
//! Overrides of the form `section.key=value` are applied after the file and
//! win over it. Unknown keys are errors at every level.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraConfig;
use crate::lidar::LidarConfig;
use crate::sim::SimConfig;
use crate::solver::SolverConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config I/O: {0}")]
    Io(String),
    #[error("config parse: {0}")]
    Parse(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("override `{0}` is not of the form key=value")]
    BadOverride(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub camera: CameraConfig,
    pub lidar: LidarConfig,
    pub solver: SolverConfig,
    pub sim: SimConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut cfg = Self::default();
        for (path, value) in flatten(&table) {
            cfg.set_value(&path, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Applies `section.key=value`. The value is read as a TOML literal and
    /// falls back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride(assignment.to_string()))?;
        let (key, raw) = (key.trim(), raw.trim());
        if key.is_empty() {
            return Err(ConfigError::BadOverride(assignment.to_string()));
        }
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let path: Vec<String> = key.split('.').map(str::to_string).collect();
        match value {
            toml::Value::Table(t) => {
                for (mut sub, leaf) in flatten(&t) {
                    sub.splice(0..0, path.iter().cloned());
                    self.set_value(&sub, leaf)?;
                }
                Ok(())
            }
            v => self.set_value(&path, v),
        }
    }

    fn set_value(&mut self, path: &[String], value: toml::Value) -> Result<(), ConfigError> {
        let dotted = path.join(".");
        let mut root = toml::Value::try_from(&*self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut slot = &mut root;
        for part in path {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| ConfigError::UnknownKey(dotted.clone()))?;
        }
        *slot = match (&*slot, value) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (toml::Value::Table(_), _) => return Err(ConfigError::UnknownKey(format!("{dotted} (a section, not a key)"))),
            (_, v) => v,
        };
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(format!("{dotted}: {}", e.message())))?;
        Ok(())
    }
}

/// Leaf values of a TOML table with their full key paths.
fn flatten(table: &toml::Table) -> Vec<(Vec<String>, toml::Value)> {
    let mut out = Vec::new();
    for (k, v) in table {
        match v {
            toml::Value::Table(t) => {
                for (mut path, leaf) in flatten(t) {
                    path.insert(0, k.clone());
                    out.push((path, leaf));
                }
            }
            leaf => out.push((vec![k.clone()], leaf.clone())),
        }
    }
    out
}
