//! File tools: read, edit, glob, grep.

use std::path::Path;

use async_trait::async_trait;
use globset::{Glob, GlobMatcher};
use regex::{Regex, RegexBuilder};
use serde_json::{json, Value};
use walkdir::WalkDir;

use super::{bool_arg, opt_str_arg, resolve_in_workspace, str_arg, Tool, ToolContext, ToolError, ToolKind};
use crate::permissions::{Operation, PermissionLayer};

const MAX_GLOB_RESULTS: usize = 1000;
const MAX_GREP_MATCHES: usize = 500;

fn io_error(path: &str, e: std::io::Error) -> ToolError {
    if e.kind() == std::io::ErrorKind::NotFound {
        ToolError::not_found(format!("{path} does not exist"))
    } else {
        ToolError::new("io", format!("{path}: {e}"))
    }
}

/// Workspace files in a stable order, skipping VCS and engine directories.
fn walk(root: &Path) -> impl Iterator<Item = walkdir::DirEntry> {
    WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            let name = e.file_name().to_string_lossy();
            !(e.depth() > 0 && e.file_type().is_dir() && (name == ".git" || name == ".sema"))
        })
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
}

pub struct ReadFileTool;

#[async_trait]
impl Tool for ReadFileTool {
    fn name(&self) -> &str {
        "read_file"
    }

    fn description(&self) -> &str {
        "Read a text file from the workspace. Optional 1-based line offset and line limit."
    }

    fn parameters(&self) -> Value {
        json!({
            "type": "object",
            "properties": {
                "path": {"type": "string"},
                "offset": {"type": "integer", "minimum": 1},
                "limit": {"type": "integer", "minimum": 1}
            },
            "required": ["path"]
        })
    }

    fn kind(&self) -> ToolKind {
        ToolKind::ReadOnly
    }

    async fn invoke(&self, args: Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let path = str_arg(&args, "path")?;
        let (abs, rel) = resolve_in_workspace(&ctx.workspace, path)?;
        let text = tokio::fs::read_to_string(&abs).await.map_err(|e| io_error(path, e))?;
        ctx.session.record_read(&ctx.agent_id, &rel);
        let offset = args.get("offset").and_then(Value::as_u64);
        let limit = args.get("limit").and_then(Value::as_u64);
        if offset.is_none() && limit.is_none() {
            return Ok(text);
        }
        let skip = offset.unwrap_or(1).saturating_sub(1) as usize;
        let take = limit.map_or(usize::MAX, |l| l as usize);
        Ok(text
            .split_inclusive('\n')
            .skip(skip)
            .take(take)
            .collect::<String>())
    }
}

pub struct EditFileTool;

#[async_trait]
impl Tool for EditFileTool {
    fn name(&self) -> &str {
        "edit_file"
    }

    fn description(&self) -> &str {
        "Replace exactly one occurrence of `old` with `new` in a file. \
With an empty `old`, creates a file that does not exist yet."
    }

    fn parameters(&self) -> Value {
        json!({
            "type": "object",
            "properties": {
                "path": {"type": "string"},
                "old": {"type": "string"},
                "new": {"type": "string"}
            },
            "required": ["path", "old", "new"]
        })
    }

    fn kind(&self) -> ToolKind {
        ToolKind::Write
    }

    fn permission_layer(&self) -> Option<PermissionLayer> {
        Some(PermissionLayer::L1)
    }

    fn operation(&self, args: &Value) -> Option<Operation> {
        Some(Operation::Edit {
            path: opt_str_arg(args, "path").unwrap_or_default().to_string(),
        })
    }

    async fn invoke(&self, args: Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let path = str_arg(&args, "path")?;
        let old = str_arg(&args, "old")?;
        let new = str_arg(&args, "new")?;
        let (abs, rel) = resolve_in_workspace(&ctx.workspace, path)?;

        if old.is_empty() {
            if abs.exists() {
                return Err(ToolError::invalid_args(format!(
                    "{rel} exists; `old` must name the text to replace"
                )));
            }
            if let Some(dir) = abs.parent() {
                tokio::fs::create_dir_all(dir).await.map_err(|e| io_error(path, e))?;
            }
            tokio::fs::write(&abs, new).await.map_err(|e| io_error(path, e))?;
            return Ok(format!("Created {rel}"));
        }

        let text = tokio::fs::read_to_string(&abs).await.map_err(|e| io_error(path, e))?;
        match text.matches(old).count() {
            0 => Err(ToolError::not_found(format!("the text to replace does not occur in {rel}"))),
            1 => {
                tokio::fs::write(&abs, text.replacen(old, new, 1))
                    .await
                    .map_err(|e| io_error(path, e))?;
                Ok(format!("Edited {rel}"))
            }
            n => Err(ToolError::new(
                "ambiguous-edit",
                format!("the text to replace occurs {n} times in {rel}; include more context"),
            )),
        }
    }
}

pub struct GlobTool;

#[async_trait]
impl Tool for GlobTool {
    fn name(&self) -> &str {
        "glob"
    }

    fn description(&self) -> &str {
        "List workspace files whose relative path matches a glob pattern such as `src/**/*.rs`."
    }

    fn parameters(&self) -> Value {
        json!({
            "type": "object",
            "properties": {"pattern": {"type": "string"}},
            "required": ["pattern"]
        })
    }

    fn kind(&self) -> ToolKind {
        ToolKind::ReadOnly
    }

    async fn invoke(&self, args: Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let pattern = str_arg(&args, "pattern")?;
        let matcher = Glob::new(pattern)
            .map_err(|e| ToolError::invalid_args(format!("bad glob: {e}")))?
            .compile_matcher();
        let root = ctx.workspace.clone();
        let hits = tokio::task::spawn_blocking(move || glob_files(&root, &matcher))
            .await
            .map_err(|e| ToolError::new("io", e.to_string()))?;
        if hits.is_empty() {
            Ok("no matches".into())
        } else {
            Ok(hits.join("\n"))
        }
    }
}

fn glob_files(root: &Path, matcher: &GlobMatcher) -> Vec<String> {
    walk(root)
        .filter_map(|e| {
            let rel = e.path().strip_prefix(root).ok()?;
            matcher.is_match(rel).then(|| rel.to_string_lossy().into_owned())
        })
        .take(MAX_GLOB_RESULTS)
        .collect()
}

pub struct GrepTool;

#[async_trait]
impl Tool for GrepTool {
    fn name(&self) -> &str {
        "grep"
    }

    fn description(&self) -> &str {
        "Search file contents under the workspace (or `path`). Fixed-string by default; \
set `regex` for a regular expression. Optional `glob` filters file names."
    }

    fn parameters(&self) -> Value {
        json!({
            "type": "object",
            "properties": {
                "pattern": {"type": "string"},
                "regex": {"type": "boolean"},
                "case_insensitive": {"type": "boolean"},
                "path": {"type": "string"},
                "glob": {"type": "string"}
            },
            "required": ["pattern"]
        })
    }

    fn kind(&self) -> ToolKind {
        ToolKind::ReadOnly
    }

    async fn invoke(&self, args: Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let pattern = str_arg(&args, "pattern")?;
        let source = if bool_arg(&args, "regex") {
            pattern.to_string()
        } else {
            regex::escape(pattern)
        };
        let re = RegexBuilder::new(&source)
            .case_insensitive(bool_arg(&args, "case_insensitive"))
            .build()
            .map_err(|e| ToolError::invalid_args(format!("bad pattern: {e}")))?;
        let filter = match opt_str_arg(&args, "glob") {
            Some(g) => Some(
                Glob::new(g)
                    .map_err(|e| ToolError::invalid_args(format!("bad glob: {e}")))?
                    .compile_matcher(),
            ),
            None => None,
        };
        let (start, _) = resolve_in_workspace(&ctx.workspace, opt_str_arg(&args, "path").unwrap_or("."))?;
        let root = ctx.workspace.clone();
        let hits = tokio::task::spawn_blocking(move || grep_files(&root, &start, &re, filter.as_ref()))
            .await
            .map_err(|e| ToolError::new("io", e.to_string()))?;
        if hits.is_empty() {
            Ok("no matches".into())
        } else {
            Ok(hits.join("\n"))
        }
    }
}

fn grep_files(root: &Path, start: &Path, re: &Regex, filter: Option<&GlobMatcher>) -> Vec<String> {
    let mut out = Vec::new();
    for entry in walk(start) {
        let Ok(rel) = entry.path().strip_prefix(root) else {
            continue;
        };
        if let Some(f) = filter {
            if !f.is_match(rel) && !f.is_match(entry.file_name()) {
                continue;
            }
        }
        let Ok(text) = std::fs::read_to_string(entry.path()) else {
            continue;
        };
        for (i, line) in text.lines().enumerate() {
            if re.is_match(line) {
                out.push(format!("{}:{}:{}", rel.display(), i + 1, line));
                if out.len() >= MAX_GREP_MATCHES {
                    return out;
                }
            }
        }
    }
    out
}
