//! Tool registry and the built-in tools.
//!
//! Every tool declares whether it only reads (`read_only`) or may change
//! something (`write`); the scheduler runs a batch concurrently only when
//! all of its tools are read-only. Tools that need a permission decision
//! describe the operation they are about to perform via
//! [`Tool::operation`].

mod agent;
mod external;
mod fs;
mod shell;

use std::collections::HashMap;
use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio_util::sync::CancellationToken;

use crate::adapters::ToolSchema;
use crate::background::BackgroundManager;
use crate::config::EngineConfig;
use crate::permissions::{Operation, PermissionLayer};
use crate::runtime::SubAgentReport;
use crate::skills::SkillRegistry;
use crate::state::Session;

pub use agent::{SkillTool, TaskTool, TodoWriteTool};
pub use external::ExternalTool;
pub use fs::{EditFileTool, GlobTool, GrepTool, ReadFileTool};
pub use shell::{BashTool, BgStatusTool, BgStopTool};

/// Name of the delegation tool. Sub-agent toolsets never contain it.
pub const DELEGATION_TOOL: &str = "task";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    ReadOnly,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolError {
    pub code: &'static str,
    pub message: String,
}

impl ToolError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new("not-found", message)
    }

    pub fn invalid_args(message: impl Into<String>) -> Self {
        Self::new("invalid-args", message)
    }
}

impl fmt::Display for ToolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ToolError {}

/// Runs a delegated task on a sub-agent.
#[async_trait]
pub trait Delegate: Send + Sync {
    async fn delegate(&self, prompt: String) -> SubAgentReport;
}

/// Everything a tool invocation may touch.
#[derive(Clone)]
pub struct ToolContext {
    pub agent_id: String,
    pub call_id: String,
    pub workspace: PathBuf,
    pub abort: CancellationToken,
    pub session: Arc<Session>,
    pub background: Arc<BackgroundManager>,
    pub skills: Arc<SkillRegistry>,
    pub delegate: Option<Arc<dyn Delegate>>,
}

#[async_trait]
pub trait Tool: Send + Sync {
    fn name(&self) -> &str;
    fn description(&self) -> &str;
    /// JSON schema of the arguments.
    fn parameters(&self) -> Value;
    fn kind(&self) -> ToolKind;
    /// Layer that gates this tool, if any.
    fn permission_layer(&self) -> Option<PermissionLayer> {
        None
    }
    /// The gated operation a call with `args` would perform.
    fn operation(&self, _args: &Value) -> Option<Operation> {
        None
    }
    async fn invoke(&self, args: Value, ctx: &ToolContext) -> Result<String, ToolError>;

    fn schema(&self) -> ToolSchema {
        ToolSchema {
            name: self.name().to_string(),
            description: self.description().to_string(),
            parameters: self.parameters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateTool(pub String);

impl fmt::Display for DuplicateTool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tool {} is already registered", self.0)
    }
}

impl std::error::Error for DuplicateTool {}

/// Name-unique set of tools, kept in registration order.
#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<Arc<dyn Tool>>,
    index: HashMap<String, usize>,
}

impl ToolRegistry {
    /// Built-in tools plus the external tools declared in `config`.
    pub fn builtin(config: &EngineConfig) -> Self {
        let mut r = Self::default();
        let tools: Vec<Arc<dyn Tool>> = vec![
            Arc::new(ReadFileTool),
            Arc::new(GlobTool),
            Arc::new(GrepTool),
            Arc::new(EditFileTool),
            Arc::new(BashTool),
            Arc::new(TodoWriteTool),
            Arc::new(TaskTool),
            Arc::new(SkillTool),
            Arc::new(BgStatusTool),
            Arc::new(BgStopTool),
        ];
        for t in tools {
            r.register(t).expect("built-in names are unique");
        }
        for e in &config.external_tools {
            // A config entry shadowing a built-in is ignored.
            let _ = r.register(Arc::new(ExternalTool::new(e.clone())));
        }
        r
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) -> Result<(), DuplicateTool> {
        let name = tool.name().to_string();
        if self.index.contains_key(&name) {
            return Err(DuplicateTool(name));
        }
        self.index.insert(name, self.tools.len());
        self.tools.push(tool);
        Ok(())
    }

    /// Registers `tool`, replacing any tool of the same name in place.
    pub fn replace(&mut self, tool: Arc<dyn Tool>) {
        match self.index.get(tool.name()) {
            Some(&i) => self.tools[i] = tool,
            None => {
                let _ = self.register(tool);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.index.get(name).map(|&i| &self.tools[i])
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.name()).collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn schemas(&self) -> Vec<ToolSchema> {
        self.tools.iter().map(|t| t.schema()).collect()
    }

    /// Copy without the named tool.
    pub fn without(&self, name: &str) -> Self {
        let mut r = Self::default();
        for t in self.tools.iter().filter(|t| t.name() != name) {
            r.register(t.clone()).expect("names stay unique");
        }
        r
    }
}

fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::ParentDir => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    out
}

/// Resolves `path` against the workspace. Returns the absolute path and the
/// workspace-relative form. Paths that leave the workspace, lexically or
/// through a symlink, are rejected.
pub fn resolve_in_workspace(workspace: &Path, path: &str) -> Result<(PathBuf, String), ToolError> {
    let outside = || ToolError::new("outside-workspace", format!("{path} is outside the workspace"));
    let root = normalize(workspace);
    let joined = normalize(&root.join(path));
    let rel = joined.strip_prefix(&root).map_err(|_| outside())?.to_owned();
    if joined.exists() {
        let real_root = root.canonicalize().map_err(|_| outside())?;
        let real = joined.canonicalize().map_err(|_| outside())?;
        if !real.starts_with(&real_root) {
            return Err(outside());
        }
    }
    let rel = if rel.as_os_str().is_empty() {
        ".".to_string()
    } else {
        rel.to_string_lossy().into_owned()
    };
    Ok((joined, rel))
}

pub(crate) fn str_arg<'a>(args: &'a Value, key: &str) -> Result<&'a str, ToolError> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| ToolError::invalid_args(format!("missing string argument {key:?}")))
}

pub(crate) fn opt_str_arg<'a>(args: &'a Value, key: &str) -> Option<&'a str> {
    args.get(key).and_then(Value::as_str)
}

pub(crate) fn bool_arg(args: &Value, key: &str) -> bool {
    args.get(key).and_then(Value::as_bool).unwrap_or(false)
}
