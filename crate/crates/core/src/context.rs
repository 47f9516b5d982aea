//! Context metering and compression.
//!
//! The context size is read straight off the usage metadata of the latest
//! assistant message, plus a forward buffer for the next request, so
//! metering never walks the history. Once the size exceeds the trigger ratio
//! of the window, the history is split at the last user-typed message: the
//! part before it is summarized by the model, the rest is kept. When
//! summarization is impossible or fails, [`safe_truncate`] drops a prefix
//! instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ContextConfig;
use crate::model::{ContentBlock, Message, UsageMetadata};
use crate::todo::{TodoItem, TodoState};

pub const SUMMARIZE_PROMPT: &str = include_str!("../assets/summarize_prompt.md");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextBudget {
    pub limit: u64,
    pub forward_buffer: u64,
    pub trigger_ratio: f64,
}

impl ContextBudget {
    pub fn new(limit: u64) -> Self {
        Self {
            limit,
            forward_buffer: 8_000,
            trigger_ratio: 0.75,
        }
    }

    pub fn from_config(c: &ContextConfig) -> Self {
        Self {
            limit: c.limit.max(0) as u64,
            forward_buffer: c.forward_buffer,
            trigger_ratio: c.trigger_ratio,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.trigger_ratio * self.limit as f64
    }
}

/// Cumulative input tokens of the latest assistant message (0 when there is
/// none or it carries no usage), plus the forward buffer.
///
/// Roles alternate, so the latest assistant message sits within the last
/// few entries; the scan stops there.
pub fn effective_context_size(history: &[Message], budget: &ContextBudget) -> u64 {
    let latest = history
        .iter()
        .rev()
        .find(|m| m.is_assistant())
        .and_then(|m| m.usage)
        .map_or(0, |u| u.cumulative_input_tokens);
    latest + budget.forward_buffer
}

pub fn should_compress(size: u64, budget: &ContextBudget) -> bool {
    size as f64 > budget.threshold()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryPartition {
    pub hist: Vec<Message>,
    pub keep: Vec<Message>,
    pub pivot_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("history has no user-initiated message to pivot on")]
pub struct NoPivot;

/// Splits at the last user message that carries no tool results.
pub fn partition_history(history: &[Message]) -> Result<HistoryPartition, NoPivot> {
    let pivot = history.iter().rposition(Message::is_user_initiated).ok_or(NoPivot)?;
    Ok(HistoryPartition {
        hist: history[..pivot].to_vec(),
        keep: history[pivot..].to_vec(),
        pivot_index: pivot,
    })
}

/// Text appended to the summary so the rules and the task list survive
/// compression.
pub fn reminder_block(todos: &[TodoItem]) -> String {
    let mut s = String::from(
        "<reminder>\nEarlier turns were compressed into the summary above. \
The original instructions and rules still apply: read files before editing them, \
respect permission decisions, keep at most one todo active.\n",
    );
    if todos.is_empty() {
        s.push_str("Todo list: empty.\n");
    } else {
        s.push_str("Todo list:\n");
        for t in todos {
            let state = match t.state {
                TodoState::Pending => "pending",
                TodoState::Active => "active",
                TodoState::Completed => "completed",
            };
            s.push_str(&format!("- [{state}] {} ({})\n", t.content, t.id));
        }
    }
    s.push_str("</reminder>");
    s
}

/// Builds the compressed history from a summary and the kept segment:
/// thinking blocks are stripped from `keep` (assistant messages left empty
/// are dropped) and usage on kept messages is cleared so the next real
/// response re-seeds the counter.
pub fn apply_compression(summary: &str, keep: Vec<Message>, todos: &[TodoItem]) -> Vec<Message> {
    let mut out = Vec::with_capacity(keep.len() + 1);
    out.push(Message::user(vec![
        ContentBlock::text(format!("<summary>\n{}\n</summary>", summary.trim())),
        ContentBlock::text(reminder_block(todos)),
    ]));
    for mut m in keep {
        m.blocks.retain(|b| !matches!(b, ContentBlock::Thinking { .. }));
        m.usage = None;
        if m.is_assistant() && m.blocks.is_empty() {
            continue;
        }
        out.push(m);
    }
    out
}

pub const TRUNCATION_NOTE: &str = "[Earlier conversation was truncated to fit the context window.]";

fn rebase(mut m: Message, by: u64) -> Message {
    if let Some(u) = m.usage.as_mut() {
        *u = UsageMetadata {
            cumulative_input_tokens: u.cumulative_input_tokens.saturating_sub(by),
            output_tokens: u.output_tokens,
        };
    }
    m
}

/// Turns tool results whose calls were cut off into plain text and puts
/// the truncation note in front.
fn rehead(first: Message) -> Message {
    let mut blocks = vec![ContentBlock::text(TRUNCATION_NOTE)];
    for b in first.blocks {
        match b {
            ContentBlock::ToolResult {
                call_id,
                content,
                is_error,
                is_user_refusal,
            } => {
                let label = if is_user_refusal {
                    "user refusal"
                } else if is_error {
                    "failed tool result"
                } else {
                    "tool result"
                };
                blocks.push(ContentBlock::text(format!(
                    "[{label} for call {call_id}, whose request was truncated]\n{content}"
                )));
            }
            other => blocks.push(other),
        }
    }
    Message::user(blocks)
}

/// Deterministic fallback: keeps the suffix after the earliest assistant
/// message `m` with `C - cumulative(m) <= L/2`, where `C` is the latest
/// cumulative count. Usage on kept messages is rebased by `cumulative(m)`.
///
/// When nothing follows `m` (a single oversized turn), only the final
/// user-initiated turn is kept.
pub fn safe_truncate(history: &[Message], budget: &ContextBudget) -> Vec<Message> {
    let half = budget.limit / 2;
    let Some(c) = history.iter().rev().find_map(|m| m.usage).map(|u| u.cumulative_input_tokens) else {
        return history.to_vec();
    };
    if c <= half {
        return history.to_vec();
    }
    let (cut, base) = history
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_assistant())
        .find_map(|(i, m)| {
            let cum = m.usage?.cumulative_input_tokens;
            (c.saturating_sub(cum) <= half).then_some((i, cum))
        })
        .expect("the latest message with usage always qualifies");

    let suffix = &history[cut + 1..];
    if suffix.is_empty() {
        return final_turn(history);
    }
    let mut out: Vec<Message> = suffix.iter().cloned().map(|m| rebase(m, base)).collect();
    let first = out.remove(0);
    out.insert(0, rehead(first));
    out
}

fn final_turn(history: &[Message]) -> Vec<Message> {
    let start = history.iter().rposition(Message::is_user_initiated).unwrap_or(0);
    let mut out: Vec<Message> = history[start..]
        .iter()
        .cloned()
        .map(|mut m| {
            m.usage = None;
            m
        })
        .collect();
    if let Some(first) = out.first() {
        if !first.is_user_initiated() {
            let first = out.remove(0);
            if first.is_user() {
                out.insert(0, rehead(first));
            } else {
                out.insert(0, Message::user_text(TRUNCATION_NOTE));
                out.insert(1, first);
            }
        }
    }
    out
}
