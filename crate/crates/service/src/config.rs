//! Service configuration: an engine configuration file with an extra
//! `[service]` table.

use std::path::Path;

use anyhow::Context;
use semacore::config::EngineConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSettings {
    pub addr: String,
    /// Upper bound on live sessions across all connections.
    pub max_sessions: usize,
    /// Frames buffered per connection before non-essential ones are dropped.
    pub outbound_capacity: usize,
    /// Server URL used by `semacore chat`. Defaults to `ws://<addr>/v1/session`.
    pub url: Option<String>,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8787".into(),
            max_sessions: 64,
            outbound_capacity: 1024,
            url: None,
        }
    }
}

impl ServiceSettings {
    pub fn chat_url(&self) -> String {
        self.url
            .clone()
            .unwrap_or_else(|| format!("ws://{}/v1/session", self.addr))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub engine: EngineConfig,
    pub service: ServiceSettings,
}

impl ServiceConfig {
    /// Loads a TOML (or `.json`) file. Engine keys sit at the top level;
    /// relative paths resolve against the file's directory.
    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let engine = EngineConfig::from_path(path)?;
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let raw: Value = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        let service = match raw.get("service") {
            Some(v) => serde_json::from_value(v.clone()).context("invalid [service] table")?,
            None => ServiceSettings::default(),
        };
        Ok(Self { engine, service })
    }
}

/// Recursively merges `patch` into `base`; objects merge key by key, any
/// other value replaces.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}
