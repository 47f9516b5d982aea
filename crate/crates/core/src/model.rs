//! Conversation data model shared by every engine component.
//!
//! A history is an ordered list of [`Message`]s. Assistant messages may carry
//! tool calls; each call must be answered by exactly one tool result in the
//! user message that immediately follows. [`validate_history`] checks these
//! structural rules and reports the first violation it finds.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

/// Token accounting reported by the provider for one assistant turn.
///
/// `cumulative_input_tokens` is the provider's input count for the request
/// that produced the message, i.e. the size of the whole context at that point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageMetadata {
    pub cumulative_input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContentBlock {
    Text {
        text: String,
    },
    Thinking {
        thinking: String,
    },
    ToolCall {
        id: String,
        tool_name: String,
        args: Value,
    },
    ToolResult {
        call_id: String,
        content: String,
        is_error: bool,
        is_user_refusal: bool,
    },
}

impl ContentBlock {
    pub fn text(text: impl Into<String>) -> Self {
        ContentBlock::Text { text: text.into() }
    }

    pub fn thinking(thinking: impl Into<String>) -> Self {
        ContentBlock::Thinking {
            thinking: thinking.into(),
        }
    }

    pub fn tool_call(id: impl Into<String>, tool_name: impl Into<String>, args: Value) -> Self {
        ContentBlock::ToolCall {
            id: id.into(),
            tool_name: tool_name.into(),
            args,
        }
    }

    pub fn tool_result(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        ContentBlock::ToolResult {
            call_id: call_id.into(),
            content: content.into(),
            is_error: false,
            is_user_refusal: false,
        }
    }

    pub fn is_tool_result(&self) -> bool {
        matches!(self, ContentBlock::ToolResult { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub blocks: Vec<ContentBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<UsageMetadata>,
}

impl Message {
    pub fn user(blocks: Vec<ContentBlock>) -> Self {
        Self {
            role: Role::User,
            blocks,
            usage: None,
        }
    }

    pub fn user_text(text: impl Into<String>) -> Self {
        Self::user(vec![ContentBlock::text(text)])
    }

    pub fn assistant(blocks: Vec<ContentBlock>, usage: Option<UsageMetadata>) -> Self {
        Self {
            role: Role::Assistant,
            blocks,
            usage,
        }
    }

    pub fn is_user(&self) -> bool {
        self.role == Role::User
    }

    pub fn is_assistant(&self) -> bool {
        self.role == Role::Assistant
    }

    /// A user message that carries no tool results, i.e. one the user (or the
    /// engine on the user's behalf) typed rather than tool traffic.
    pub fn is_user_initiated(&self) -> bool {
        self.is_user() && !self.blocks.iter().any(ContentBlock::is_tool_result)
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = (&str, &str, &Value)> {
        self.blocks.iter().filter_map(|b| match b {
            ContentBlock::ToolCall {
                id,
                tool_name,
                args,
            } => Some((id.as_str(), tool_name.as_str(), args)),
            _ => None,
        })
    }

    pub fn has_tool_calls(&self) -> bool {
        self.tool_calls().next().is_some()
    }

    /// Concatenated text blocks.
    pub fn text(&self) -> String {
        self.blocks
            .iter()
            .filter_map(|b| match b {
                ContentBlock::Text { text } => Some(text.as_str()),
                _ => None,
            })
            .collect::<Vec<_>>()
            .join("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryRule {
    /// The first message is not a user message.
    LeadingAssistant,
    /// Two assistant messages in a row.
    ConsecutiveAssistant,
    /// A tool call without exactly one matching result in the next message.
    DanglingCall,
    /// A tool result whose call id is not among the preceding assistant's calls.
    OrphanResult,
    /// Two results for the same call id.
    DuplicateResult,
    /// A tool call in a user message or a tool result in an assistant message.
    MisplacedBlock,
    /// Two tool calls in one assistant message share an id.
    DuplicateCallId,
    /// Usage metadata attached to a user message.
    UsageOnUser,
}

impl fmt::Display for HistoryRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            HistoryRule::LeadingAssistant => "leading-assistant",
            HistoryRule::ConsecutiveAssistant => "consecutive-assistant",
            HistoryRule::DanglingCall => "dangling-call",
            HistoryRule::OrphanResult => "orphan-result",
            HistoryRule::DuplicateResult => "duplicate-result",
            HistoryRule::MisplacedBlock => "misplaced-block",
            HistoryRule::DuplicateCallId => "duplicate-call-id",
            HistoryRule::UsageOnUser => "usage-on-user",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryViolation {
    pub index: usize,
    pub rule: HistoryRule,
    pub detail: String,
}

impl fmt::Display for HistoryViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "message {}: {} ({})", self.index, self.rule, self.detail)
    }
}

impl std::error::Error for HistoryViolation {}

fn violation(index: usize, rule: HistoryRule, detail: impl Into<String>) -> HistoryViolation {
    HistoryViolation {
        index,
        rule,
        detail: detail.into(),
    }
}

/// Checks the structural rules of a conversation history.
///
/// A trailing assistant message with unanswered calls is reported as a
/// dangling call at index `history.len()`, where the answer was expected.
pub fn validate_history(history: &[Message]) -> Result<(), HistoryViolation> {
    if let Some(first) = history.first() {
        if first.is_assistant() {
            return Err(violation(0, HistoryRule::LeadingAssistant, "history starts with assistant"));
        }
    }

    for (i, msg) in history.iter().enumerate() {
        match msg.role {
            Role::User => {
                if msg.usage.is_some() {
                    return Err(violation(i, HistoryRule::UsageOnUser, "usage on user message"));
                }
                if msg
                    .blocks
                    .iter()
                    .any(|b| matches!(b, ContentBlock::ToolCall { .. }))
                {
                    return Err(violation(i, HistoryRule::MisplacedBlock, "tool call in user message"));
                }
            }
            Role::Assistant => {
                if i > 0 && history[i - 1].is_assistant() {
                    return Err(violation(
                        i,
                        HistoryRule::ConsecutiveAssistant,
                        "two assistant messages in a row",
                    ));
                }
                if msg.blocks.iter().any(ContentBlock::is_tool_result) {
                    return Err(violation(
                        i,
                        HistoryRule::MisplacedBlock,
                        "tool result in assistant message",
                    ));
                }
                let mut seen = HashSet::new();
                for (id, _, _) in msg.tool_calls() {
                    if !seen.insert(id) {
                        return Err(violation(
                            i,
                            HistoryRule::DuplicateCallId,
                            format!("call id {id} repeated"),
                        ));
                    }
                }
            }
        }

        // Results in this message must answer calls of the message right before it.
        let expected: Vec<&str> = match i.checked_sub(1).map(|p| &history[p]) {
            Some(prev) if prev.is_assistant() && msg.is_user() => {
                prev.tool_calls().map(|(id, _, _)| id).collect()
            }
            _ => Vec::new(),
        };

        let mut answered: Vec<&str> = Vec::new();
        for block in &msg.blocks {
            if let ContentBlock::ToolResult { call_id, .. } = block {
                answered.push(call_id.as_str());
            }
        }

        for id in &expected {
            if !answered.contains(id) {
                return Err(violation(
                    i,
                    HistoryRule::DanglingCall,
                    format!("call {id} has no result"),
                ));
            }
        }
        let mut seen = HashSet::new();
        for id in &answered {
            if !expected.contains(id) {
                return Err(violation(
                    i,
                    HistoryRule::OrphanResult,
                    format!("result for unknown call {id}"),
                ));
            }
            if !seen.insert(*id) {
                return Err(violation(
                    i,
                    HistoryRule::DuplicateResult,
                    format!("call {id} answered twice"),
                ));
            }
        }
    }

    if let Some(last) = history.last() {
        if last.is_assistant() {
            if let Some((id, _, _)) = last.tool_calls().next() {
                return Err(violation(
                    history.len(),
                    HistoryRule::DanglingCall,
                    format!("call {id} has no result"),
                ));
            }
        }
    }
    Ok(())
}

/// True when `cumulative_input_tokens` never decreases across assistant
/// messages that carry usage.
pub fn usage_is_monotone(history: &[Message]) -> bool {
    let mut last = 0u64;
    for usage in history.iter().filter_map(|m| m.usage) {
        if usage.cumulative_input_tokens < last {
            return false;
        }
        last = usage.cumulative_input_tokens;
    }
    true
}
