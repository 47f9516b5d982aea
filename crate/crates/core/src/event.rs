//! Typed engine events and their JSON wire frames.
//!
//! Every frame is one line of UTF-8 JSON. The `type` discriminator comes
//! first, followed by the variant fields and the envelope
//! (`v`, `session_id`, `agent_id`). Field order is fixed by the type
//! definitions, so encoding is byte-stable.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::background::TaskStatus;
use crate::permissions::PermissionLayer;
use crate::todo::{TodoItem, UpdateKind};

pub const WIRE_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnStatus {
    Completed,
    Aborted,
    Error,
}

/// What a `token_stats` event reports on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsStage {
    /// Usage of a regular model turn.
    Turn,
    /// Context size that tripped the compression threshold.
    PreCompression,
    /// Size after a successful summarization.
    Summarized,
    /// Size after the deterministic truncation fallback.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventPayload {
    TextChunk {
        text: String,
    },
    ThinkingChunk {
        text: String,
    },
    ToolCallStarted {
        call_id: String,
        tool_name: String,
        args: Value,
    },
    ToolResult {
        call_id: String,
        tool_name: String,
        content: String,
        is_error: bool,
        is_user_refusal: bool,
    },
    TokenStats {
        stage: StatsStage,
        cumulative_input_tokens: u64,
        output_tokens: u64,
        effective_size: u64,
        limit: u64,
    },
    PermissionRequest {
        request_id: String,
        layer: PermissionLayer,
        summary: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        risk_note: Option<String>,
        tool_name: String,
        call_id: String,
    },
    TodoUpdate {
        update_kind: UpdateKind,
        todos: Vec<TodoItem>,
    },
    BackgroundNotification {
        task_id: String,
        command: String,
        status: TaskStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exit_code: Option<i32>,
    },
    SessionComplete {
        status: TurnStatus,
    },
    Error {
        code: String,
        message: String,
    },
}

impl EventPayload {
    pub fn type_name(&self) -> &'static str {
        match self {
            EventPayload::TextChunk { .. } => "text_chunk",
            EventPayload::ThinkingChunk { .. } => "thinking_chunk",
            EventPayload::ToolCallStarted { .. } => "tool_call_started",
            EventPayload::ToolResult { .. } => "tool_result",
            EventPayload::TokenStats { .. } => "token_stats",
            EventPayload::PermissionRequest { .. } => "permission_request",
            EventPayload::TodoUpdate { .. } => "todo_update",
            EventPayload::BackgroundNotification { .. } => "background_notification",
            EventPayload::SessionComplete { .. } => "session_complete",
            EventPayload::Error { .. } => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WireVersion;

impl Serialize for WireVersion {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(WIRE_VERSION)
    }
}

impl<'de> Deserialize<'de> for WireVersion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        if v == WIRE_VERSION {
            Ok(WireVersion)
        } else {
            Err(serde::de::Error::custom(format!("unsupported wire version {v}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineEvent {
    #[serde(flatten)]
    pub payload: EventPayload,
    pub v: WireVersion,
    pub session_id: String,
    pub agent_id: String,
}

impl EngineEvent {
    pub fn new(session_id: impl Into<String>, agent_id: impl Into<String>, payload: EventPayload) -> Self {
        Self {
            payload,
            v: WireVersion,
            session_id: session_id.into(),
            agent_id: agent_id.into(),
        }
    }

    pub fn is_session_complete(&self) -> bool {
        matches!(self.payload, EventPayload::SessionComplete { .. })
    }
}

#[derive(Debug, Error)]
#[error("malformed event frame: {0}")]
pub struct DecodeError(#[from] serde_json::Error);

pub fn serialize_event(event: &EngineEvent) -> String {
    serde_json::to_string(event).expect("engine events always serialize")
}

pub fn deserialize_event(frame: &str) -> Result<EngineEvent, DecodeError> {
    Ok(serde_json::from_str(frame)?)
}
