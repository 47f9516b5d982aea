//! Frames exchanged over `/v1/session`.
//!
//! Every frame is one JSON text message with a `type` tag. The server sends
//! its own control frames (`welcome`, `ack`, `protocol_error`) and forwards
//! engine events unchanged, so a client decodes a server message by trying
//! [`ServiceFrame`] first and falling back to [`EngineEvent`].

use std::path::PathBuf;

use semacore::event::{deserialize_event, DecodeError, EngineEvent};
use semacore::permissions::{Resolution, ResolutionKind};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientFrame {
    /// Opens a new session, or reattaches to an existing one when `token`
    /// is given.
    Hello {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        workspace: Option<PathBuf>,
        /// JSON object merged over the server's engine configuration.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token: Option<String>,
    },
    Input {
        token: String,
        content: String,
    },
    Resolution {
        token: String,
        request_id: String,
        kind: ResolutionKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        feedback: Option<String>,
    },
    Abort {
        token: String,
    },
    SwitchSession {
        token: String,
        session_id: String,
    },
}

impl ClientFrame {
    pub fn token(&self) -> Option<&str> {
        match self {
            ClientFrame::Hello { token, .. } => token.as_deref(),
            ClientFrame::Input { token, .. }
            | ClientFrame::Resolution { token, .. }
            | ClientFrame::Abort { token }
            | ClientFrame::SwitchSession { token, .. } => Some(token),
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            ClientFrame::Hello { .. } => "hello",
            ClientFrame::Input { .. } => "input",
            ClientFrame::Resolution { .. } => "resolution",
            ClientFrame::Abort { .. } => "abort",
            ClientFrame::SwitchSession { .. } => "switch_session",
        }
    }

    pub fn resolution(token: &str, request_id: &str, resolution: Resolution) -> Self {
        ClientFrame::Resolution {
            token: token.to_string(),
            request_id: request_id.to_string(),
            kind: resolution.kind,
            feedback: resolution.feedback,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    /// Input started a turn right away.
    Started,
    /// Input was queued behind the running turn.
    Enqueued,
    Resolved,
    /// The request had already been settled; the resolution was ignored.
    Duplicate,
    /// Abort tripped a running turn.
    Aborting,
    /// Abort arrived while nothing was running.
    Idle,
    /// Session switch waits for the running turn to end.
    Staged,
    /// Session switch took effect immediately.
    Applied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServiceFrame {
    Welcome {
        token: String,
        session_id: String,
        instance_id: String,
        resumed: bool,
    },
    Ack {
        /// Type of the client frame being acknowledged.
        of: String,
        status: AckStatus,
    },
    ProtocolError {
        code: String,
        message: String,
    },
}

impl ServiceFrame {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        ServiceFrame::ProtocolError {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("service frames always serialize")
    }
}

/// Anything the server may send.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerMessage {
    Service(ServiceFrame),
    Event(EngineEvent),
}

impl ServerMessage {
    pub fn parse(text: &str) -> Result<Self, DecodeError> {
        match serde_json::from_str::<ServiceFrame>(text) {
            Ok(f) => Ok(ServerMessage::Service(f)),
            Err(_) => deserialize_event(text).map(ServerMessage::Event),
        }
    }
}
