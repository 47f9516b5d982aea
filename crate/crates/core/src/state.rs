//! Session state, split into per-agent local state and session-wide
//! global state.
//!
//! Everything about a session lives in one [`SessionCore`] behind a mutex.
//! Agent-local tiers are keyed by agent id; the main agent is `"main"`,
//! sub-agents are `"sub-…"` and exist only while their delegation runs.

use std::collections::BTreeMap;
use std::sync::{Mutex, MutexGuard};
use std::time::SystemTime;

use serde::Serialize;
use serde_json::Value;
use tokio_util::sync::CancellationToken;

use crate::model::Message;
use crate::queue::SessionQueue;
use crate::todo::TodoItem;

pub const MAIN_AGENT: &str = "main";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    #[default]
    Idle,
    Processing,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AgentLocalState {
    pub exec: ExecStatus,
    pub history: Vec<Message>,
    pub todos: Vec<TodoItem>,
    /// Last read time per workspace-relative path. Recorded, not enforced.
    pub file_reads: BTreeMap<String, SystemTime>,
    /// Skill bodies loaded during the current query, appended to the
    /// system prompt of later model turns and handed to sub-agents.
    pub skill_segments: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GlobalState {
    /// Session-wide file modification right (L1).
    pub edit_allowed: bool,
    /// Abort signal of the current turn, shared by every agent of the
    /// session. A fresh token is installed whenever a turn starts.
    #[serde(serialize_with = "serialize_abort")]
    pub abort: CancellationToken,
    pub pending_session: Option<String>,
    /// Background notices waiting for the next user-role message.
    pub pending_notices: Vec<String>,
    pub queue: SessionQueue,
}

fn serialize_abort<S: serde::Serializer>(t: &CancellationToken, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_bool(t.is_cancelled())
}

impl GlobalState {
    pub fn new(edit_allowed: bool) -> Self {
        Self {
            edit_allowed,
            abort: CancellationToken::new(),
            pending_session: None,
            pending_notices: Vec::new(),
            queue: SessionQueue::default(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SessionCore {
    pub id: String,
    pub local: BTreeMap<String, AgentLocalState>,
    pub global: GlobalState,
}

impl SessionCore {
    pub fn new(id: impl Into<String>, edit_allowed: bool) -> Self {
        let mut local = BTreeMap::new();
        local.insert(MAIN_AGENT.to_string(), AgentLocalState::default());
        Self {
            id: id.into(),
            local,
            global: GlobalState::new(edit_allowed),
        }
    }

    pub fn main(&self) -> &AgentLocalState {
        self.local.get(MAIN_AGENT).expect("main agent always present")
    }

    pub fn main_mut(&mut self) -> &mut AgentLocalState {
        self.local.get_mut(MAIN_AGENT).expect("main agent always present")
    }

    pub fn agent_mut(&mut self, agent_id: &str) -> &mut AgentLocalState {
        self.local.entry(agent_id.to_string()).or_default()
    }

    /// Full state as JSON, for deep-equality checks.
    pub fn dump(&self) -> Value {
        serde_json::to_value(self).expect("session state serializes")
    }
}

#[derive(Debug)]
pub struct Session {
    core: Mutex<SessionCore>,
    edit_default: bool,
}

impl Session {
    pub fn new(id: impl Into<String>, edit_default: bool) -> Self {
        Self {
            core: Mutex::new(SessionCore::new(id, edit_default)),
            edit_default,
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, SessionCore> {
        self.core.lock().unwrap()
    }

    pub fn id(&self) -> String {
        self.lock().id.clone()
    }

    pub fn dump(&self) -> Value {
        self.lock().dump()
    }

    /// Replaces the whole state with a fresh session. Returns how many
    /// queued items were dropped.
    pub fn reconstruct(&self, new_id: impl Into<String>) -> usize {
        let mut core = self.lock();
        let purged = core.global.queue.len();
        *core = SessionCore::new(new_id, self.edit_default);
        purged
    }

    /// Whether edits are allowed in a freshly created session.
    pub fn edit_default(&self) -> bool {
        self.edit_default
    }

    /// State dump of a freshly created session with the same defaults.
    pub fn fresh_dump(&self, id: &str) -> Value {
        SessionCore::new(id, self.edit_default).dump()
    }

    pub fn abort_token(&self) -> CancellationToken {
        self.lock().global.abort.clone()
    }

    pub fn trip_abort(&self) {
        self.lock().global.abort.cancel();
    }

    pub fn edit_allowed(&self) -> bool {
        self.lock().global.edit_allowed
    }

    pub fn set_edit_allowed(&self, allowed: bool) {
        self.lock().global.edit_allowed = allowed;
    }

    pub fn history(&self, agent_id: &str) -> Vec<Message> {
        self.lock()
            .local
            .get(agent_id)
            .map(|a| a.history.clone())
            .unwrap_or_default()
    }

    pub fn todos(&self, agent_id: &str) -> Vec<TodoItem> {
        self.lock()
            .local
            .get(agent_id)
            .map(|a| a.todos.clone())
            .unwrap_or_default()
    }

    pub fn with_agent<R>(&self, agent_id: &str, f: impl FnOnce(&mut AgentLocalState) -> R) -> R {
        f(self.lock().agent_mut(agent_id))
    }

    pub fn record_read(&self, agent_id: &str, path: &str) {
        self.with_agent(agent_id, |a| {
            a.file_reads.insert(path.to_string(), SystemTime::now());
        });
    }

    pub fn remove_agent(&self, agent_id: &str) -> Option<AgentLocalState> {
        debug_assert_ne!(agent_id, MAIN_AGENT);
        self.lock().local.remove(agent_id)
    }

    pub fn agent_ids(&self) -> Vec<String> {
        self.lock().local.keys().cloned().collect()
    }

    pub fn main_status(&self) -> ExecStatus {
        self.lock().main().exec
    }
}
