//! Shell execution and background task tools.

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{bool_arg, opt_str_arg, str_arg, Tool, ToolContext, ToolError, ToolKind};
use crate::background::{BackgroundError, ForegroundOutcome, TaskSnapshot};
use crate::permissions::{Operation, PermissionLayer};

fn bg_error(e: BackgroundError) -> ToolError {
    ToolError::new(e.code(), e.to_string())
}

fn with_exit(output: String, exit_code: Option<i32>) -> String {
    match exit_code {
        Some(0) => output,
        Some(code) => format!("{output}\n[exit code {code}]"),
        None => format!("{output}\n[terminated by signal]"),
    }
}

pub struct BashTool;

#[async_trait]
impl Tool for BashTool {
    fn name(&self) -> &str {
        "bash"
    }

    fn description(&self) -> &str {
        "Run a shell command in the workspace. Long-running commands are moved to the \
background automatically; set `background` to start one there directly."
    }

    fn parameters(&self) -> Value {
        json!({
            "type": "object",
            "properties": {
                "command": {"type": "string"},
                "background": {"type": "boolean"}
            },
            "required": ["command"]
        })
    }

    fn kind(&self) -> ToolKind {
        ToolKind::Write
    }

    fn permission_layer(&self) -> Option<PermissionLayer> {
        Some(PermissionLayer::L2)
    }

    fn operation(&self, args: &Value) -> Option<Operation> {
        Some(Operation::Bash {
            command: opt_str_arg(args, "command").unwrap_or_default().to_string(),
        })
    }

    async fn invoke(&self, args: Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let command = str_arg(&args, "command")?;
        if bool_arg(&args, "background") {
            let id = ctx.background.spawn(command).map_err(bg_error)?;
            return Ok(format!(
                "Started background task {id}. You will be notified when it finishes; use bg_status to check on it."
            ));
        }
        let outcome = ctx
            .background
            .run_foreground(command, &ctx.workspace, &ctx.abort)
            .await
            .map_err(bg_error)?;
        Ok(match outcome {
            ForegroundOutcome::Finished { output, exit_code, .. } => with_exit(output, exit_code),
            ForegroundOutcome::TakenOver { task_id, output_so_far } => format!(
                "{output_so_far}\n[still running; moved to background task {task_id}. \
You will be notified when it finishes.]"
            ),
            ForegroundOutcome::Cancelled { output } => format!("{output}\n[cancelled]"),
        })
    }
}

fn render_snapshot(s: &TaskSnapshot) -> String {
    let exit = s.exit_code.map_or("none".to_string(), |c| c.to_string());
    format!(
        "{} [{}] exit_code={} bytes={}\ncommand: {}\nlog: {}\n--- output tail ---\n{}",
        s.task_id,
        s.status.as_str(),
        exit,
        s.bytes_total,
        s.command,
        s.log_path.display(),
        s.tail
    )
}

pub struct BgStatusTool;

#[async_trait]
impl Tool for BgStatusTool {
    fn name(&self) -> &str {
        "bg_status"
    }

    fn description(&self) -> &str {
        "Show a background task's status and output tail, or list all tasks when no id is given."
    }

    fn parameters(&self) -> Value {
        json!({
            "type": "object",
            "properties": {"task_id": {"type": "string"}}
        })
    }

    fn kind(&self) -> ToolKind {
        ToolKind::ReadOnly
    }

    async fn invoke(&self, args: Value, ctx: &ToolContext) -> Result<String, ToolError> {
        if let Some(id) = opt_str_arg(&args, "task_id") {
            let snap = ctx.background.poll_output(id).map_err(bg_error)?;
            return Ok(render_snapshot(&snap));
        }
        let all = ctx.background.list();
        if all.is_empty() {
            return Ok("no background tasks".into());
        }
        Ok(all
            .iter()
            .map(|s| format!("{} [{}] {}", s.task_id, s.status.as_str(), s.command))
            .collect::<Vec<_>>()
            .join("\n"))
    }
}

pub struct BgStopTool;

#[async_trait]
impl Tool for BgStopTool {
    fn name(&self) -> &str {
        "bg_stop"
    }

    fn description(&self) -> &str {
        "Stop a running background task."
    }

    fn parameters(&self) -> Value {
        json!({
            "type": "object",
            "properties": {"task_id": {"type": "string"}},
            "required": ["task_id"]
        })
    }

    fn kind(&self) -> ToolKind {
        ToolKind::Write
    }

    async fn invoke(&self, args: Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let id = str_arg(&args, "task_id")?;
        let snap = ctx.background.stop(id).await.map_err(bg_error)?;
        Ok(render_snapshot(&snap))
    }
}
