//! Tools that act on the agent itself: todo tracking, delegation, skills.

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{str_arg, Tool, ToolContext, ToolError, ToolKind};
use crate::event::EventPayload;
use crate::permissions::{Operation, PermissionLayer};
use crate::runtime::SubAgentStatus;
use crate::tenancy::resolve_resources;
use crate::todo::{apply_todo_update, TodoItem, TodoState, UpdateKind};

pub struct TodoWriteTool;

#[derive(Deserialize)]
struct TodoArgs {
    todos: Vec<TodoItem>,
}

fn render_todos(todos: &[TodoItem]) -> String {
    todos
        .iter()
        .map(|t| {
            let mark = match t.state {
                TodoState::Pending => "[ ]",
                TodoState::Active => "[>]",
                TodoState::Completed => "[x]",
            };
            format!("{mark} {} {}", t.id, t.content)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[async_trait]
impl Tool for TodoWriteTool {
    fn name(&self) -> &str {
        "todo_write"
    }

    fn description(&self) -> &str {
        "Update the task list. Sending only known ids changes their states; sending any new id \
replaces the whole list. At most one item may be active."
    }

    fn parameters(&self) -> Value {
        json!({
            "type": "object",
            "properties": {
                "todos": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {
                            "id": {"type": "string"},
                            "content": {"type": "string"},
                            "state": {"type": "string", "enum": ["pending", "active", "completed"]}
                        },
                        "required": ["id", "content", "state"]
                    }
                }
            },
            "required": ["todos"]
        })
    }

    fn kind(&self) -> ToolKind {
        ToolKind::Write
    }

    async fn invoke(&self, args: Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let TodoArgs { todos } =
            serde_json::from_value(args).map_err(|e| ToolError::invalid_args(e.to_string()))?;
        let (list, kind) = ctx.session.with_agent(&ctx.agent_id, |a| {
            let (list, kind) = apply_todo_update(&a.todos, &todos)
                .map_err(|v| ToolError::new("rejected-update", format!("{}: {v}", v.rule())))?;
            a.todos = list.clone();
            Ok::<_, ToolError>((list, kind))
        })?;
        if let Ok(bundle) = resolve_resources() {
            bundle.emit(
                &ctx.agent_id,
                EventPayload::TodoUpdate {
                    update_kind: kind,
                    todos: list.clone(),
                },
            );
        }
        let label = match kind {
            UpdateKind::Subset => "states updated",
            UpdateKind::Replace => "list replaced",
        };
        Ok(format!("Todo {label}:\n{}", render_todos(&list)))
    }
}

pub struct TaskTool;

#[async_trait]
impl Tool for TaskTool {
    fn name(&self) -> &str {
        super::DELEGATION_TOOL
    }

    fn description(&self) -> &str {
        "Delegate a self-contained task to a sub-agent with its own context. \
Only its final answer comes back, so say exactly what to report."
    }

    fn parameters(&self) -> Value {
        json!({
            "type": "object",
            "properties": {"prompt": {"type": "string"}},
            "required": ["prompt"]
        })
    }

    fn kind(&self) -> ToolKind {
        ToolKind::Write
    }

    async fn invoke(&self, args: Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let prompt = str_arg(&args, "prompt")?.to_string();
        let delegate = ctx
            .delegate
            .as_ref()
            .ok_or_else(|| ToolError::new("unavailable", "delegation is not available here"))?;
        let report = delegate.delegate(prompt).await;
        match report.status {
            SubAgentStatus::Completed => Ok(report.final_text),
            SubAgentStatus::Cancelled => Err(ToolError::new("cancelled", "the sub-agent was cancelled")),
            SubAgentStatus::Failed => Err(ToolError::new(
                "sub-agent-failed",
                if report.final_text.is_empty() {
                    "the sub-agent failed".to_string()
                } else {
                    report.final_text
                },
            )),
        }
    }
}

pub struct SkillTool;

#[async_trait]
impl Tool for SkillTool {
    fn name(&self) -> &str {
        "skill"
    }

    fn description(&self) -> &str {
        "Load a named skill. Its instructions apply to the rest of the current task."
    }

    fn parameters(&self) -> Value {
        json!({
            "type": "object",
            "properties": {"name": {"type": "string"}},
            "required": ["name"]
        })
    }

    fn kind(&self) -> ToolKind {
        ToolKind::Write
    }

    fn permission_layer(&self) -> Option<PermissionLayer> {
        Some(PermissionLayer::L3)
    }

    fn operation(&self, args: &Value) -> Option<Operation> {
        Some(Operation::Skill {
            name: args.get("name").and_then(Value::as_str).unwrap_or_default().to_string(),
        })
    }

    async fn invoke(&self, args: Value, ctx: &ToolContext) -> Result<String, ToolError> {
        let name = str_arg(&args, "name")?;
        let skill = ctx
            .skills
            .get(name)
            .ok_or_else(|| ToolError::not_found(format!("no skill named {name:?}")))?;
        let segment = skill.prompt_segment();
        ctx.session.with_agent(&ctx.agent_id, |a| {
            if !a.skill_segments.contains(&segment) {
                a.skill_segments.push(segment);
            }
        });
        Ok(format!("Skill {name} loaded; its instructions apply to the rest of this task."))
    }
}
