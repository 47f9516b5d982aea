//! The reasoning loop: context check, model turn, tool scheduling,
//! recursion, with abort handling at each phase.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use futures::StreamExt;
use serde_json::Value;
use tokio_util::sync::CancellationToken;

use super::subagent::SubAgentDelegate;
use super::{
    Authorization, EngineInner, ExecutionRecord, InterruptPhase, InterruptRecord, CANCELLED, SYSTEM_PROMPT,
};
use crate::adapters::{Emission, ModelRequest, RequestPurpose};
use crate::context::{
    apply_compression, effective_context_size, partition_history, safe_truncate, should_compress, ContextBudget,
    SUMMARIZE_PROMPT,
};
use crate::event::{EventPayload, StatsStage, TurnStatus};
use crate::model::{ContentBlock, Message, UsageMetadata};
use crate::permissions::{decide_with, Decision, Operation, ResolutionKind};
use crate::state::MAIN_AGENT;
use crate::tools::{Delegate, ToolContext, ToolKind, ToolRegistry};

/// Who is running a loop and with what.
#[derive(Clone)]
pub(crate) struct AgentRun {
    pub id: String,
    pub is_main: bool,
    pub tools: Arc<ToolRegistry>,
    pub base_prompt: String,
    pub abort: CancellationToken,
}

pub(crate) struct AgentOutcome {
    pub status: TurnStatus,
    pub final_text: String,
}

struct PlannedCall {
    index: usize,
    id: String,
    name: String,
    args: Value,
}

struct CallResult {
    block: ContentBlock,
}

/// The phase that saw the abort first within one batch.
#[derive(Default)]
struct FirstObserved(Mutex<Option<InterruptPhase>>);

impl FirstObserved {
    fn mark(&self, phase: InterruptPhase) {
        self.0.lock().unwrap().get_or_insert(phase);
    }

    fn get(&self) -> Option<InterruptPhase> {
        *self.0.lock().unwrap()
    }
}

enum Inference {
    Done { blocks: Vec<ContentBlock>, usage: Option<UsageMetadata> },
    Aborted { blocks: Vec<ContentBlock> },
    Failed(String),
}

fn placeholder(call_id: &str) -> ContentBlock {
    ContentBlock::ToolResult {
        call_id: call_id.to_string(),
        content: CANCELLED.to_string(),
        is_error: true,
        is_user_refusal: false,
    }
}

fn push_text(blocks: &mut Vec<ContentBlock>, chunk: String, thinking: bool) {
    match (blocks.last_mut(), thinking) {
        (Some(ContentBlock::Text { text }), false) => text.push_str(&chunk),
        (Some(ContentBlock::Thinking { thinking }), true) => thinking.push_str(&chunk),
        (_, false) => blocks.push(ContentBlock::text(chunk)),
        (_, true) => blocks.push(ContentBlock::thinking(chunk)),
    }
}

impl EngineInner {
    pub(crate) async fn run_main_query(self: &Arc<Self>, prompt: String) -> TurnStatus {
        let abort = self.session().abort_token();
        self.session().with_agent(MAIN_AGENT, |a| a.skill_segments.clear());
        let run = AgentRun {
            id: MAIN_AGENT.to_string(),
            is_main: true,
            tools: self.bundle.tools.clone(),
            base_prompt: self.main_prompt(),
            abort,
        };
        self.run_agent(&run, prompt).await.status
    }

    fn main_prompt(&self) -> String {
        let mut p = format!("{}\nWorkspace: {}\n", SYSTEM_PROMPT.trim_end(), self.workspace.display());
        if !self.skills.is_empty() {
            p.push_str("\nSkills you can load with the skill tool:\n");
            p.push_str(&self.skills.catalog());
            p.push('\n');
        }
        p
    }

    fn system_prompt(&self, run: &AgentRun) -> String {
        let segments = self.session().with_agent(&run.id, |a| a.skill_segments.clone());
        if segments.is_empty() {
            return run.base_prompt.clone();
        }
        format!("{}\n{}", run.base_prompt, segments.join("\n\n"))
    }

    fn record_interrupt(&self, agent_id: &str, phase: InterruptPhase) {
        self.interrupts.lock().unwrap().push(InterruptRecord {
            agent_id: agent_id.to_string(),
            phase,
        });
    }

    fn append(&self, agent_id: &str, message: Message) {
        self.session().with_agent(agent_id, |a| a.history.push(message));
    }

    /// The agent loop. Histories stay valid however it ends.
    pub(crate) async fn run_agent(self: &Arc<Self>, run: &AgentRun, prompt: String) -> AgentOutcome {
        let mut blocks = vec![ContentBlock::text(prompt)];
        if run.is_main {
            blocks.extend(self.take_notices());
        }
        self.append(&run.id, Message::user(blocks));

        let max_turns = self.bundle.config.max_turns;
        for _ in 0..max_turns {
            if run.abort.is_cancelled() {
                self.record_interrupt(&run.id, InterruptPhase::RecursionTermination);
                return aborted();
            }
            if run.is_main {
                self.maybe_compress(&run.abort).await;
            }

            let inference = self.infer(run).await;
            let (blocks, usage) = match inference {
                Inference::Done { blocks, usage } => (blocks, usage),
                Inference::Aborted { blocks } => {
                    // Calls from a cut-off stream are dropped; text is kept.
                    let kept: Vec<_> = blocks
                        .into_iter()
                        .filter(|b| matches!(b, ContentBlock::Text { .. }))
                        .collect();
                    if !kept.is_empty() {
                        self.append(&run.id, Message::assistant(kept, None));
                    }
                    self.record_interrupt(&run.id, InterruptPhase::PostInferenceDispatch);
                    return aborted();
                }
                Inference::Failed(message) => {
                    self.emit(&run.id, EventPayload::Error { code: "model-error".into(), message });
                    return AgentOutcome {
                        status: TurnStatus::Error,
                        final_text: String::new(),
                    };
                }
            };

            let message = Message::assistant(blocks, usage);
            let final_text = message.text();
            let calls: Vec<PlannedCall> = message
                .tool_calls()
                .enumerate()
                .map(|(index, (id, name, args))| PlannedCall {
                    index,
                    id: id.to_string(),
                    name: name.to_string(),
                    args: args.clone(),
                })
                .collect();
            self.append(&run.id, message);
            self.emit_turn_stats(&run.id, usage);

            if calls.is_empty() {
                return AgentOutcome {
                    status: TurnStatus::Completed,
                    final_text,
                };
            }

            self.hook(&run.id, InterruptPhase::PostInferenceDispatch, None);
            if run.abort.is_cancelled() {
                let results: Vec<_> = calls.iter().map(|c| placeholder(&c.id)).collect();
                for (c, r) in calls.iter().zip(&results) {
                    self.emit_result(&run.id, &c.name, r);
                }
                self.append(&run.id, Message::user(results));
                self.record_interrupt(&run.id, InterruptPhase::PostInferenceDispatch);
                return aborted();
            }

            let observed = FirstObserved::default();
            let results = self.schedule_tools(run, &calls, &observed).await;
            let interrupted = observed.get();
            let mut blocks: Vec<ContentBlock> = results.into_iter().map(|r| r.block).collect();
            if run.is_main {
                blocks.extend(self.take_notices());
            }
            self.append(&run.id, Message::user(blocks));

            self.hook(&run.id, InterruptPhase::RecursionTermination, None);
            if run.abort.is_cancelled() {
                self.record_interrupt(&run.id, interrupted.unwrap_or(InterruptPhase::RecursionTermination));
                return aborted();
            }
        }
        self.emit(
            &run.id,
            EventPayload::Error {
                code: "max-turns".into(),
                message: format!("stopped after {max_turns} model turns"),
            },
        );
        AgentOutcome {
            status: TurnStatus::Error,
            final_text: String::new(),
        }
    }

    fn take_notices(&self) -> Vec<ContentBlock> {
        std::mem::take(&mut self.session().lock().global.pending_notices)
            .into_iter()
            .map(ContentBlock::text)
            .collect()
    }

    fn budget(&self) -> ContextBudget {
        ContextBudget::from_config(&self.bundle.config.context)
    }

    fn emit_turn_stats(&self, agent_id: &str, usage: Option<UsageMetadata>) {
        let budget = self.budget();
        let history = self.session().history(agent_id);
        let usage = usage.unwrap_or_default();
        self.emit(
            agent_id,
            EventPayload::TokenStats {
                stage: StatsStage::Turn,
                cumulative_input_tokens: usage.cumulative_input_tokens,
                output_tokens: usage.output_tokens,
                effective_size: effective_context_size(&history, &budget),
                limit: budget.limit,
            },
        );
    }

    fn emit_stats(&self, stage: StatsStage, history: &[Message], budget: &ContextBudget) {
        let usage = history
            .iter()
            .rev()
            .find(|m| m.is_assistant())
            .and_then(|m| m.usage)
            .unwrap_or_default();
        self.emit(
            MAIN_AGENT,
            EventPayload::TokenStats {
                stage,
                cumulative_input_tokens: usage.cumulative_input_tokens,
                output_tokens: usage.output_tokens,
                effective_size: effective_context_size(history, budget),
                limit: budget.limit,
            },
        );
    }

    /// Compresses the main agent's history when it crosses the threshold.
    async fn maybe_compress(&self, abort: &CancellationToken) {
        let budget = self.budget();
        let history = self.session().history(MAIN_AGENT);
        if !should_compress(effective_context_size(&history, &budget), &budget) {
            return;
        }
        self.emit_stats(StatsStage::PreCompression, &history, &budget);

        let summarized = match partition_history(&history) {
            Ok(p) if !p.hist.is_empty() => match self.summarize(p.hist, abort).await {
                Some(Ok(summary)) => {
                    let todos = self.session().todos(MAIN_AGENT);
                    Some(apply_compression(&summary, p.keep, &todos))
                }
                // Aborted: leave the history alone, the loop stops next.
                None => return,
                Some(Err(e)) => {
                    tracing::warn!(error = %e, "summarization failed, truncating");
                    None
                }
            },
            _ => None,
        };
        let (stage, new_history) = match summarized {
            Some(h) => (StatsStage::Summarized, h),
            None => (StatsStage::Truncated, safe_truncate(&history, &budget)),
        };
        self.session().with_agent(MAIN_AGENT, |a| a.history = new_history.clone());
        self.emit_stats(stage, &new_history, &budget);
    }

    async fn summarize(&self, hist: Vec<Message>, abort: &CancellationToken) -> Option<Result<String, String>> {
        let mut history = hist;
        history.push(Message::user_text(
            "Summarize the conversation above following the instructions in the system prompt.",
        ));
        let req = ModelRequest {
            system_prompt: SUMMARIZE_PROMPT.to_string(),
            history,
            tools: Vec::new(),
            max_tokens: self.bundle.config.model.max_tokens,
            purpose: RequestPurpose::Summarize,
        };
        let collect = async {
            let mut stream = self.adapter.stream_turn(req);
            let mut text = String::new();
            while let Some(e) = stream.next().await {
                match e {
                    Emission::Text(t) => text.push_str(&t),
                    Emission::Error(e) => return Err(e),
                    _ => {}
                }
            }
            if text.trim().is_empty() {
                Err("empty summary".to_string())
            } else {
                Ok(text)
            }
        };
        let timeout = Duration::from_millis(self.bundle.config.context.summarize_timeout_ms);
        tokio::select! {
            biased;
            _ = abort.cancelled() => None,
            r = tokio::time::timeout(timeout, collect) => {
                Some(r.unwrap_or_else(|_| Err("summarization timed out".to_string())))
            }
        }
    }

    async fn infer(&self, run: &AgentRun) -> Inference {
        let req = ModelRequest {
            system_prompt: self.system_prompt(run),
            history: self.session().history(&run.id),
            tools: run.tools.schemas(),
            max_tokens: self.bundle.config.model.max_tokens,
            purpose: RequestPurpose::Agent,
        };
        let mut stream = self.adapter.stream_turn(req);
        let mut blocks = Vec::new();
        loop {
            let next = tokio::select! {
                biased;
                _ = run.abort.cancelled() => return Inference::Aborted { blocks },
                e = stream.next() => e,
            };
            match next {
                None => return Inference::Done { blocks, usage: None },
                Some(Emission::Text(t)) => {
                    self.emit(&run.id, EventPayload::TextChunk { text: t.clone() });
                    push_text(&mut blocks, t, false);
                }
                Some(Emission::Thinking(t)) => {
                    self.emit(&run.id, EventPayload::ThinkingChunk { text: t.clone() });
                    push_text(&mut blocks, t, true);
                }
                Some(Emission::ToolCall { id, name, args }) => blocks.push(ContentBlock::tool_call(id, name, args)),
                Some(Emission::Usage(u)) => return Inference::Done { blocks, usage: Some(u) },
                Some(Emission::Error(e)) => return Inference::Failed(e),
            }
        }
    }

    /// Runs a plan concurrently when every tool only reads, one call at a
    /// time in plan order otherwise. Results come back in plan order.
    async fn schedule_tools(
        self: &Arc<Self>,
        run: &AgentRun,
        calls: &[PlannedCall],
        observed: &FirstObserved,
    ) -> Vec<CallResult> {
        let all_read = calls.iter().all(|c| {
            run.tools
                .get(&c.name)
                .is_some_and(|t| t.kind() == ToolKind::ReadOnly)
        });
        if all_read && calls.len() > 1 {
            futures::future::join_all(calls.iter().map(|c| self.execute_call(run, c, observed))).await
        } else {
            let mut out = Vec::with_capacity(calls.len());
            for c in calls {
                out.push(self.execute_call(run, c, observed).await);
            }
            out
        }
    }

    fn emit_result(&self, agent_id: &str, tool_name: &str, block: &ContentBlock) {
        if let ContentBlock::ToolResult {
            call_id,
            content,
            is_error,
            is_user_refusal,
        } = block
        {
            self.emit(
                agent_id,
                EventPayload::ToolResult {
                    call_id: call_id.clone(),
                    tool_name: tool_name.to_string(),
                    content: content.clone(),
                    is_error: *is_error,
                    is_user_refusal: *is_user_refusal,
                },
            );
        }
    }

    fn finish(&self, run: &AgentRun, call: &PlannedCall, block: ContentBlock) -> CallResult {
        self.emit_result(&run.id, &call.name, &block);
        CallResult { block }
    }

    async fn execute_call(self: &Arc<Self>, run: &AgentRun, call: &PlannedCall, observed: &FirstObserved) -> CallResult {
        self.hook(&run.id, InterruptPhase::PreExecution, Some(call.index));
        if run.abort.is_cancelled() {
            observed.mark(InterruptPhase::PreExecution);
            return self.finish(run, call, placeholder(&call.id));
        }
        self.emit(
            &run.id,
            EventPayload::ToolCallStarted {
                call_id: call.id.clone(),
                tool_name: call.name.clone(),
                args: call.args.clone(),
            },
        );
        let Some(tool) = run.tools.get(&call.name).cloned() else {
            let block = error_result(&call.id, "unknown-tool", &format!("no tool named {:?}", call.name));
            return self.finish(run, call, block);
        };

        let op = tool.operation(&call.args);
        let authorization = match &op {
            None => Authorization::NotGated,
            Some(op) => match self.authorize(run, call, op).await {
                Ok(a) => a,
                Err((block, phase)) => {
                    if let Some(phase) = phase {
                        observed.mark(phase);
                    }
                    return self.finish(run, call, block);
                }
            },
        };

        self.hook(&run.id, InterruptPhase::ActiveExecution, Some(call.index));
        let ctx = ToolContext {
            agent_id: run.id.clone(),
            call_id: call.id.clone(),
            workspace: self.workspace.clone(),
            abort: run.abort.clone(),
            session: self.session().clone(),
            background: self.background.clone(),
            skills: self.skills.clone(),
            delegate: run
                .is_main
                .then(|| Arc::new(SubAgentDelegate::new(self.clone())) as Arc<dyn Delegate>),
        };
        let started = Instant::now();
        let result = {
            let invoke = tool.invoke(call.args.clone(), &ctx);
            tokio::pin!(invoke);
            tokio::select! {
                biased;
                r = &mut invoke => Some(r),
                _ = run.abort.cancelled() => {
                    // Give the handler a moment to clean up after the
                    // signal (the shell kills its process group).
                    tokio::time::timeout(Duration::from_secs(2), invoke).await.ok()
                }
            }
        };
        self.log.lock().unwrap().push(ExecutionRecord {
            agent_id: run.id.clone(),
            call_id: call.id.clone(),
            tool_name: call.name.clone(),
            layer: op.as_ref().map(Operation::layer),
            authorization,
            started,
            ended: Instant::now(),
        });

        if run.abort.is_cancelled() {
            observed.mark(InterruptPhase::ActiveExecution);
            return self.finish(run, call, placeholder(&call.id));
        }
        let block = match result {
            Some(Ok(content)) => ContentBlock::tool_result(&call.id, content),
            Some(Err(e)) => error_result(&call.id, e.code, &e.message),
            None => placeholder(&call.id),
        };
        self.finish(run, call, block)
    }

    /// Permission check for a gated call. `Err` carries the result that
    /// replaces the execution and the phase that saw an abort, if any.
    async fn authorize(
        &self,
        run: &AgentRun,
        call: &PlannedCall,
        op: &Operation,
    ) -> Result<Authorization, (ContentBlock, Option<InterruptPhase>)> {
        let policy = self.current_policy();
        let draft = match decide_with(op, &policy, self.classifier.as_ref()).await {
            Decision::Allow => return Ok(Authorization::Policy),
            Decision::Deny { reason } => {
                return Err((error_result(&call.id, "permission-denied", &reason), None))
            }
            Decision::Request(draft) => draft,
        };
        let pending = self.approvals.open();
        self.emit(
            &run.id,
            EventPayload::PermissionRequest {
                request_id: pending.request_id.clone(),
                layer: draft.layer,
                summary: draft.summary,
                risk_note: draft.risk_note,
                tool_name: call.name.clone(),
                call_id: call.id.clone(),
            },
        );
        let Some(resolution) = self.approvals.wait(pending, &run.abort).await else {
            return Err((placeholder(&call.id), Some(InterruptPhase::PreExecution)));
        };
        match resolution.kind {
            ResolutionKind::TransientAllow => Ok(Authorization::Approved(resolution.kind)),
            ResolutionKind::PersistentAllow => {
                match op {
                    Operation::Edit { .. } => self.session().set_edit_allowed(true),
                    other => {
                        if let Err(e) = self.policy.grant(other) {
                            tracing::warn!(error = %e, "could not persist grant");
                            self.emit(
                                &run.id,
                                EventPayload::Error {
                                    code: "policy-error".into(),
                                    message: e.to_string(),
                                },
                            );
                        }
                    }
                }
                Ok(Authorization::Approved(resolution.kind))
            }
            ResolutionKind::Reject => {
                self.session().trip_abort();
                Err((
                    refusal(&call.id, "The user rejected this operation.".into()),
                    Some(InterruptPhase::ActiveExecution),
                ))
            }
            ResolutionKind::GuidedCorrection => {
                let feedback = resolution.feedback.unwrap_or_default();
                Err((
                    refusal(
                        &call.id,
                        format!("The user declined this operation and gave guidance instead: {feedback}"),
                    ),
                    None,
                ))
            }
        }
    }
}

fn aborted() -> AgentOutcome {
    AgentOutcome {
        status: TurnStatus::Aborted,
        final_text: String::new(),
    }
}

fn error_result(call_id: &str, code: &str, message: &str) -> ContentBlock {
    ContentBlock::ToolResult {
        call_id: call_id.to_string(),
        content: format!("{code}: {message}"),
        is_error: true,
        is_user_refusal: false,
    }
}

fn refusal(call_id: &str, content: String) -> ContentBlock {
    ContentBlock::ToolResult {
        call_id: call_id.to_string(),
        content,
        is_error: false,
        is_user_refusal: true,
    }
}
