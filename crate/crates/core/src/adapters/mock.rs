//! Deterministic scripted adapter.
//!
//! A script is a JSON document with one queue per request purpose:
//!
//! ```json
//! {
//!   "turns": [
//!     [{"tool_call": {"id": "c1", "name": "read_file", "args": {"path": "a.txt"}}},
//!      {"usage": {"cumulative_input_tokens": 120, "output_tokens": 8}}],
//!     [{"text": "done"}, {"usage": 180}]
//!   ],
//!   "summaries": [[{"text": "SUMMARY"}, {"usage": 40}]],
//!   "screenings": []
//! }
//! ```
//!
//! Emissions are `text`, `thinking`, `tool_call`, `usage` (a full usage
//! object or just the cumulative input count), `error` and `delay_ms`.
//! Every turn must end with exactly one `usage`, or with an `error`.
//! Requests past the end of a queue get an error emission.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures::stream::{self, BoxStream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{Emission, ModelAdapter, ModelRequest, RequestPurpose};
use crate::model::UsageMetadata;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedUsage {
    Cumulative(u64),
    Full(UsageMetadata),
}

impl ScriptedUsage {
    fn metadata(&self) -> UsageMetadata {
        match self {
            ScriptedUsage::Cumulative(n) => UsageMetadata {
                cumulative_input_tokens: *n,
                output_tokens: 0,
            },
            ScriptedUsage::Full(u) => *u,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCall {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub args: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedEmission {
    Text(String),
    Thinking(String),
    ToolCall(ScriptedCall),
    Usage(ScriptedUsage),
    Error(String),
    DelayMs(u64),
}

pub type ScriptedTurn = Vec<ScriptedEmission>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub turns: Vec<ScriptedTurn>,
    #[serde(default)]
    pub summaries: Vec<ScriptedTurn>,
    #[serde(default)]
    pub screenings: Vec<ScriptedTurn>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script {0}: {1}")]
    Io(String, std::io::Error),
    #[error("malformed script: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{queue}[{index}]: {message}")]
    Invalid {
        queue: &'static str,
        index: usize,
        message: String,
    },
}

fn validate_turn(queue: &'static str, index: usize, turn: &ScriptedTurn) -> Result<(), ScriptError> {
    let invalid = |message: &str| ScriptError::Invalid {
        queue,
        index,
        message: message.to_string(),
    };
    let usages = turn
        .iter()
        .filter(|e| matches!(e, ScriptedEmission::Usage(_)))
        .count();
    let errors = turn
        .iter()
        .filter(|e| matches!(e, ScriptedEmission::Error(_)))
        .count();
    match turn.iter().rev().find(|e| !matches!(e, ScriptedEmission::DelayMs(_))) {
        Some(ScriptedEmission::Usage(_)) if usages == 1 && errors == 0 => Ok(()),
        Some(ScriptedEmission::Error(_)) if usages == 0 && errors == 1 => Ok(()),
        Some(ScriptedEmission::Usage(_)) | Some(ScriptedEmission::Error(_)) => {
            Err(invalid("a turn carries exactly one terminal usage or error"))
        }
        _ => Err(invalid("turn must end with a usage or an error emission")),
    }
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let script: MockScript = serde_json::from_str(text)?;
        script.validate()?;
        Ok(script)
    }

    pub fn from_path(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScriptError::Io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        for (queue, turns) in [
            ("turns", &self.turns),
            ("summaries", &self.summaries),
            ("screenings", &self.screenings),
        ] {
            for (i, t) in turns.iter().enumerate() {
                validate_turn(queue, i, t)?;
            }
        }
        Ok(())
    }
}

struct MockState {
    turns: VecDeque<ScriptedTurn>,
    summaries: VecDeque<ScriptedTurn>,
    screenings: VecDeque<ScriptedTurn>,
    requests: Vec<ModelRequest>,
}

/// Replays a [`MockScript`] and records every request it receives.
#[derive(Clone)]
pub struct MockAdapter {
    state: Arc<Mutex<MockState>>,
}

impl MockAdapter {
    pub fn new(script: MockScript) -> Self {
        Self {
            state: Arc::new(Mutex::new(MockState {
                turns: script.turns.into(),
                summaries: script.summaries.into(),
                screenings: script.screenings.into(),
                requests: Vec::new(),
            })),
        }
    }

    pub fn requests(&self) -> Vec<ModelRequest> {
        self.state.lock().unwrap().requests.clone()
    }

    pub fn remaining_turns(&self) -> usize {
        self.state.lock().unwrap().turns.len()
    }
}

fn to_emission(e: ScriptedEmission) -> Option<Emission> {
    Some(match e {
        ScriptedEmission::Text(t) => Emission::Text(t),
        ScriptedEmission::Thinking(t) => Emission::Thinking(t),
        ScriptedEmission::ToolCall(c) => Emission::ToolCall {
            id: c.id,
            name: c.name,
            args: c.args,
        },
        ScriptedEmission::Usage(u) => Emission::Usage(u.metadata()),
        ScriptedEmission::Error(m) => Emission::Error(m),
        ScriptedEmission::DelayMs(_) => return None,
    })
}

impl ModelAdapter for MockAdapter {
    fn name(&self) -> &str {
        "mock"
    }

    fn stream_turn(&self, req: ModelRequest) -> BoxStream<'static, Emission> {
        let purpose = req.purpose;
        let turn = {
            let mut state = self.state.lock().unwrap();
            state.requests.push(req);
            match purpose {
                RequestPurpose::Agent => state.turns.pop_front(),
                RequestPurpose::Summarize => state.summaries.pop_front(),
                RequestPurpose::Screen => state.screenings.pop_front(),
            }
        };
        let turn: VecDeque<ScriptedEmission> = match turn {
            Some(t) => t.into(),
            None => vec![ScriptedEmission::Error(format!("mock script exhausted ({purpose:?})"))].into(),
        };
        stream::unfold(turn, |mut q| async move {
            loop {
                match q.pop_front()? {
                    ScriptedEmission::DelayMs(ms) => tokio::time::sleep(Duration::from_millis(ms)).await,
                    e => return to_emission(e).map(|em| (em, q)),
                }
            }
        })
        .boxed()
    }
}
