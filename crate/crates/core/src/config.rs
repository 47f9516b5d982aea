//! Engine configuration, loaded from TOML or JSON.
//!
//! ```toml
//! workspace = "."
//! seed = 7
//!
//! [model]
//! adapter = "mock"
//! script = "script.json"
//!
//! [context]
//! limit = 100000
//!
//! [permissions]
//! bash_whitelist = ["git", "ls", "cat"]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::permissions::Whitelist;

pub const ADAPTER_NAMES: [&str; 3] = ["mock", "openai-compat", "anthropic"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        "invalid-config"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub adapter: String,
    /// Mock script path (mock adapter only).
    pub script: Option<PathBuf>,
    pub base_url: Option<String>,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub max_tokens: u32,
    /// Route whitelist misses through the model-assisted injection classifier.
    pub screen_with_model: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            adapter: "mock".into(),
            script: None,
            base_url: None,
            model: String::new(),
            api_key_env: None,
            max_tokens: 4096,
            screen_with_model: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    /// Maximum context window L in tokens.
    pub limit: i64,
    pub forward_buffer: u64,
    pub trigger_ratio: f64,
    pub summarize_timeout_ms: u64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            limit: 200_000,
            forward_buffer: 8_000,
            trigger_ratio: 0.75,
            summarize_timeout_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermissionsConfig {
    pub bash_whitelist: Vec<String>,
    /// Extra whitelist entries, one per line; `#` starts a comment.
    pub whitelist_file: Option<PathBuf>,
    /// Grant the session-wide edit right up front.
    pub edit_allowed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundConfig {
    pub max_concurrent: usize,
    pub retention: usize,
    pub timeout_threshold_ms: u64,
    pub memory_tail_bytes: usize,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            max_concurrent: 10,
            retention: 50,
            timeout_threshold_ms: 120_000,
            memory_tail_bytes: 64 * 1024,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkillsConfig {
    /// Defaults to `<workspace>/.sema/skills`.
    pub project_dir: Option<PathBuf>,
    pub user_dir: Option<PathBuf>,
    pub builtin_dir: Option<PathBuf>,
}

/// A locally registered stand-in for an external (MCP-style) tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalToolConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Fixed text returned on every call.
    #[serde(default)]
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub workspace: PathBuf,
    pub seed: u64,
    pub max_turns: usize,
    pub model: ModelConfig,
    pub context: ContextConfig,
    pub permissions: PermissionsConfig,
    pub background: BackgroundConfig,
    pub skills: SkillsConfig,
    pub external_tools: Vec<ExternalToolConfig>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("."),
            seed: 0,
            max_turns: 50,
            model: ModelConfig::default(),
            context: ContextConfig::default(),
            permissions: PermissionsConfig::default(),
            background: BackgroundConfig::default(),
            skills: SkillsConfig::default(),
            external_tools: Vec::new(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Loads a `.json` or TOML file and resolves relative paths against
    /// the file's directory.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut config = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.workspace);
        for p in [
            self.model.script.as_mut(),
            self.permissions.whitelist_file.as_mut(),
            self.skills.project_dir.as_mut(),
            self.skills.user_dir.as_mut(),
            self.skills.builtin_dir.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.context;
        if c.limit <= 0 {
            return Err(ConfigError::Invalid(format!("context limit must be positive, got {}", c.limit)));
        }
        if !(c.trigger_ratio > 0.0 && c.trigger_ratio < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "trigger_ratio must lie in (0, 1), got {}",
                c.trigger_ratio
            )));
        }
        if c.forward_buffer as f64 >= c.trigger_ratio * c.limit as f64 {
            return Err(ConfigError::Invalid(
                "forward_buffer must be smaller than trigger_ratio * limit".into(),
            ));
        }
        if !ADAPTER_NAMES.contains(&self.model.adapter.as_str()) {
            return Err(ConfigError::Invalid(format!(
                "unknown model adapter {:?}",
                self.model.adapter
            )));
        }
        if self.max_turns == 0 {
            return Err(ConfigError::Invalid("max_turns must be at least 1".into()));
        }
        if self.background.max_concurrent == 0 {
            return Err(ConfigError::Invalid("background.max_concurrent must be at least 1".into()));
        }
        if let Some(path) = &self.permissions.whitelist_file {
            if path.exists() {
                std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
            }
        }
        Ok(())
    }

    /// Whitelist from the inline list plus the optional whitelist file.
    pub fn base_whitelist(&self) -> Result<Whitelist, ConfigError> {
        let mut w = Whitelist::new(self.permissions.bash_whitelist.iter().cloned());
        if let Some(path) = &self.permissions.whitelist_file {
            match std::fs::read_to_string(path) {
                Ok(text) => {
                    for line in text.lines() {
                        let entry = line.split('#').next().unwrap_or("").trim();
                        w.insert(entry);
                    }
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => {
                    return Err(ConfigError::Io {
                        path: path.clone(),
                        source,
                    })
                }
            }
        }
        Ok(w)
    }

    pub fn project_skills_dir(&self) -> PathBuf {
        self.skills
            .project_dir
            .clone()
            .unwrap_or_else(|| self.workspace.join(".sema").join("skills"))
    }
}
