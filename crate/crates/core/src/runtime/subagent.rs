//! One-level delegation: a sub-agent runs the same loop against private
//! state and only its final answer travels back.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::Rng;
use serde::Serialize;

use super::turn::AgentRun;
use super::{EngineInner, SUBAGENT_PROMPT};
use crate::event::TurnStatus;
use crate::state::{ExecStatus, MAIN_AGENT};
use crate::tools::Delegate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubAgentStatus {
    Completed,
    Cancelled,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubAgentReport {
    pub agent_id: String,
    pub final_text: String,
    /// Output tokens of every turn plus the last input count.
    pub tokens_consumed: u64,
    pub wall_time: Duration,
    pub status: SubAgentStatus,
}

/// Current branch from `.git/HEAD`, if the workspace is a checkout.
fn git_branch(workspace: &Path) -> Option<String> {
    let head = std::fs::read_to_string(workspace.join(".git/HEAD")).ok()?;
    let head = head.trim();
    Some(match head.strip_prefix("ref: refs/heads/") {
        Some(branch) => branch.to_string(),
        None => format!("detached at {}", &head[..head.len().min(12)]),
    })
}

pub(crate) fn subagent_prompt(workspace: &Path) -> String {
    let mut p = format!("{}\nWorkspace: {}\n", SUBAGENT_PROMPT.trim_end(), workspace.display());
    if let Some(branch) = git_branch(workspace) {
        p.push_str(&format!("Git branch: {branch}\n"));
    }
    p
}

pub(crate) struct SubAgentDelegate {
    inner: Arc<EngineInner>,
}

impl SubAgentDelegate {
    pub(crate) fn new(inner: Arc<EngineInner>) -> Self {
        Self { inner }
    }

    fn fresh_id(&self) -> String {
        let taken = self.inner.session().agent_ids();
        let mut rng = self.inner.rng.lock().unwrap();
        loop {
            let id = format!("sub-{:08x}", rng.gen::<u32>());
            if !taken.contains(&id) {
                return id;
            }
        }
    }
}

#[async_trait]
impl Delegate for SubAgentDelegate {
    async fn delegate(&self, prompt: String) -> SubAgentReport {
        let started = Instant::now();
        let session = self.inner.session().clone();
        let id = self.fresh_id();
        let segments = session.with_agent(MAIN_AGENT, |a| a.skill_segments.clone());
        session.with_agent(&id, |a| {
            a.exec = ExecStatus::Processing;
            a.skill_segments = segments;
        });
        let run = AgentRun {
            id: id.clone(),
            is_main: false,
            tools: self.inner.sub_tools.clone(),
            base_prompt: subagent_prompt(&self.inner.workspace),
            abort: session.abort_token(),
        };
        let outcome = self.inner.run_agent(&run, prompt).await;

        let state = session.remove_agent(&id).unwrap_or_default();
        let usages: Vec<_> = state.history.iter().filter_map(|m| m.usage).collect();
        let tokens_consumed = usages.iter().map(|u| u.output_tokens).sum::<u64>()
            + usages.last().map_or(0, |u| u.cumulative_input_tokens);
        SubAgentReport {
            agent_id: id,
            final_text: outcome.final_text,
            tokens_consumed,
            wall_time: started.elapsed(),
            status: match outcome.status {
                TurnStatus::Completed => SubAgentStatus::Completed,
                TurnStatus::Aborted => SubAgentStatus::Cancelled,
                TurnStatus::Error => SubAgentStatus::Failed,
            },
        }
    }
}
