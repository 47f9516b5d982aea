//! The engine: input dispatch, the per-session turn driver, commands and
//! background notifications.
//!
//! An [`Engine`] owns one resource bundle (one session, one event bus). Input
//! goes through [`Engine::dispatch`]: when the main agent is idle a driver
//! task starts a turn immediately, otherwise the item waits in the session
//! queue. The driver runs turns back to back until the queue is drained,
//! finalizing exactly once after each turn.

mod subagent;
mod turn;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::Instant;

use futures::FutureExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;
use tokio::sync::{mpsc, watch};
use tokio_util::sync::CancellationToken;

use crate::adapters::{select_adapter, ModelAdapter};
use crate::background::{BackgroundManager, TaskNotice};
use crate::config::{ConfigError, EngineConfig};
use crate::event::{EngineEvent, EventPayload, TurnStatus};
use crate::permissions::{
    ApprovalBroker, ApprovalError, InjectionClassifier, ModelAssistedClassifier, PermissionLayer,
    PermissionPolicy, PolicyError, PolicyStore, ResolutionKind, ResolveOutcome, Resolution,
    RuleClassifier, SessionPolicy,
};
use crate::queue::Batch;
use crate::skills::{SkillRegistry, SkillWarning};
use crate::state::{ExecStatus, Session, SessionCore, MAIN_AGENT};
use crate::tenancy::{run_in_context, ResourceBundle};
use crate::tools::{Tool, ToolRegistry, DELEGATION_TOOL};

pub use subagent::{SubAgentReport, SubAgentStatus};

pub const SYSTEM_PROMPT: &str = include_str!("../../assets/system_prompt.md");
pub const SUBAGENT_PROMPT: &str = include_str!("../../assets/subagent_prompt.md");

/// Content of the placeholder result given to calls that never ran or were
/// cut short by an abort.
pub const CANCELLED: &str = "cancelled";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchOutcome {
    Started,
    Enqueued,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchOutcome {
    Staged,
    Applied,
}

/// Where in a turn an abort can be observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InterruptPhase {
    /// Model output with tool calls is in, nothing scheduled yet.
    PostInferenceDispatch,
    /// A call is about to start (or waits for approval).
    PreExecution,
    /// A call is running.
    ActiveExecution,
    /// Results are flushed, the next model turn has not started.
    RecursionTermination,
}

/// A checkpoint reported to the phase hook. `call_index` is the position
/// of the call in the model's plan, where one applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhasePoint {
    pub agent_id: String,
    pub phase: InterruptPhase,
    pub call_index: Option<usize>,
}

/// Observes every checkpoint; tests use it to trip the abort at a chosen
/// phase.
pub type PhaseHook = Arc<dyn Fn(&PhasePoint) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterruptRecord {
    pub agent_id: String,
    pub phase: InterruptPhase,
}

/// How a gated call came to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Authorization {
    NotGated,
    Policy,
    Approved(ResolutionKind),
}

/// One tool execution, recorded by the engine around the handler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionRecord {
    pub agent_id: String,
    pub call_id: String,
    pub tool_name: String,
    pub layer: Option<PermissionLayer>,
    pub authorization: Authorization,
    pub started: Instant,
    pub ended: Instant,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QueueStats {
    pub dispatched: u64,
    pub processed: u64,
    pub purged: u64,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("policy file: {0}")]
    Policy(#[from] PolicyError),
    #[error("workspace {0}: {1}")]
    Workspace(PathBuf, std::io::Error),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Config(e) => e.code(),
            EngineError::Policy(_) => "policy-error",
            EngineError::Workspace(..) => "invalid-config",
        }
    }
}

pub struct EngineBuilder {
    config: EngineConfig,
    adapter: Option<Arc<dyn ModelAdapter>>,
    classifier: Option<Arc<dyn InjectionClassifier>>,
    tools: Vec<Arc<dyn Tool>>,
    phase_hook: Option<PhaseHook>,
    session_id: String,
}

impl EngineBuilder {
    pub fn new(config: EngineConfig) -> Self {
        Self {
            config,
            adapter: None,
            classifier: None,
            tools: Vec::new(),
            phase_hook: None,
            session_id: "default".into(),
        }
    }

    /// Uses `adapter` instead of the one named in the config.
    pub fn adapter(mut self, adapter: Arc<dyn ModelAdapter>) -> Self {
        self.adapter = Some(adapter);
        self
    }

    pub fn classifier(mut self, classifier: Arc<dyn InjectionClassifier>) -> Self {
        self.classifier = Some(classifier);
        self
    }

    /// Adds a tool, replacing a built-in of the same name.
    pub fn tool(mut self, tool: Arc<dyn Tool>) -> Self {
        self.tools.push(tool);
        self
    }

    pub fn phase_hook(mut self, hook: PhaseHook) -> Self {
        self.phase_hook = Some(hook);
        self
    }

    pub fn session_id(mut self, id: impl Into<String>) -> Self {
        self.session_id = id.into();
        self
    }

    pub fn build(self) -> Result<Engine, EngineError> {
        let mut config = self.config;
        config.validate()?;
        let workspace = config
            .workspace
            .canonicalize()
            .map_err(|e| EngineError::Workspace(config.workspace.clone(), e))?;
        config.workspace = workspace.clone();

        let adapter = match self.adapter {
            Some(a) => a,
            None => select_adapter(&config.model)?,
        };
        let classifier: Arc<dyn InjectionClassifier> = match self.classifier {
            Some(c) => c,
            None if config.model.screen_with_model => Arc::new(ModelAssistedClassifier::new(adapter.clone())),
            None => Arc::new(RuleClassifier),
        };
        let policy = PolicyStore::open(&workspace, config.base_whitelist()?)?;

        let (skills, skill_warnings) = SkillRegistry::load(
            Some(&config.project_skills_dir()),
            config.skills.user_dir.as_deref(),
            config.skills.builtin_dir.as_deref(),
        );

        let mut tools = ToolRegistry::builtin(&config);
        for t in self.tools {
            tools.replace(t);
        }
        let sub_tools = Arc::new(tools.without(DELEGATION_TOOL));
        let tools = Arc::new(tools);

        let background = BackgroundManager::new(config.background.clone(), &workspace);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let config = Arc::new(config);
        let bundle = Arc::new(ResourceBundle::new(config.clone(), tools.clone(), self.session_id));
        let (busy, _) = watch::channel(false);

        let inner = Arc::new(EngineInner {
            bundle,
            adapter,
            classifier,
            policy,
            approvals: ApprovalBroker::new(),
            skills: Arc::new(skills),
            skill_warnings: Mutex::new(skill_warnings),
            sub_tools,
            background,
            workspace,
            rng: Mutex::new(rng),
            phase_hook: self.phase_hook,
            log: Mutex::new(Vec::new()),
            interrupts: Mutex::new(Vec::new()),
            stats: Mutex::new(QueueStats::default()),
            busy,
            warned: AtomicBool::new(false),
        });
        let weak: Weak<EngineInner> = Arc::downgrade(&inner);
        inner.background.set_notifier(Arc::new(move |notice| {
            if let Some(inner) = weak.upgrade() {
                inner.on_notice(notice);
            }
        }));
        Ok(Engine { inner })
    }
}

pub(crate) struct EngineInner {
    pub(crate) bundle: Arc<ResourceBundle>,
    pub(crate) adapter: Arc<dyn ModelAdapter>,
    pub(crate) classifier: Arc<dyn InjectionClassifier>,
    pub(crate) policy: PolicyStore,
    pub(crate) approvals: ApprovalBroker,
    pub(crate) skills: Arc<SkillRegistry>,
    skill_warnings: Mutex<Vec<SkillWarning>>,
    pub(crate) sub_tools: Arc<ToolRegistry>,
    pub(crate) background: Arc<BackgroundManager>,
    pub(crate) workspace: PathBuf,
    pub(crate) rng: Mutex<ChaCha8Rng>,
    pub(crate) phase_hook: Option<PhaseHook>,
    pub(crate) log: Mutex<Vec<ExecutionRecord>>,
    pub(crate) interrupts: Mutex<Vec<InterruptRecord>>,
    stats: Mutex<QueueStats>,
    busy: watch::Sender<bool>,
    warned: AtomicBool,
}

/// Handle to one engine instance. Cheap to clone.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<EngineInner>,
}

impl Engine {
    pub fn builder(config: EngineConfig) -> EngineBuilder {
        EngineBuilder::new(config)
    }

    pub fn instance_id(&self) -> &str {
        &self.inner.bundle.instance_id
    }

    pub fn bundle(&self) -> Arc<ResourceBundle> {
        self.inner.bundle.clone()
    }

    pub fn session(&self) -> Arc<Session> {
        self.inner.bundle.session.clone()
    }

    pub fn session_id(&self) -> String {
        self.inner.bundle.session.id()
    }

    pub fn subscribe(&self) -> mpsc::UnboundedReceiver<EngineEvent> {
        self.inner.bundle.events.subscribe()
    }

    pub fn workspace(&self) -> &Path {
        &self.inner.workspace
    }

    pub fn policy(&self) -> &PolicyStore {
        &self.inner.policy
    }

    pub fn approvals(&self) -> &ApprovalBroker {
        &self.inner.approvals
    }

    pub fn background(&self) -> &Arc<BackgroundManager> {
        &self.inner.background
    }

    pub fn skills(&self) -> &SkillRegistry {
        &self.inner.skills
    }

    pub fn tools(&self) -> &ToolRegistry {
        &self.inner.bundle.tools
    }

    /// The toolset handed to sub-agents.
    pub fn sub_agent_tools(&self) -> &ToolRegistry {
        &self.inner.sub_tools
    }

    /// Starts a turn for `content` if the main agent is idle, queues it
    /// otherwise.
    pub fn dispatch(&self, content: impl Into<String>) -> DispatchOutcome {
        self.inner.dispatch(content.into())
    }

    pub fn resolve(&self, request_id: &str, resolution: Resolution) -> Result<ResolveOutcome, ApprovalError> {
        self.inner.approvals.resolve(request_id, resolution)
    }

    /// Trips the abort signal of the running turn. Returns false when idle.
    pub fn abort(&self) -> bool {
        let core = self.inner.bundle.session.lock();
        if core.main().exec == ExecStatus::Processing {
            core.global.abort.cancel();
            true
        } else {
            false
        }
    }

    pub fn request_session_switch(&self, new_id: impl Into<String>) -> SwitchOutcome {
        self.inner.request_session_switch(new_id.into())
    }

    pub fn is_idle(&self) -> bool {
        !*self.inner.busy.borrow()
    }

    /// Resolves once no turn is running and the queue is empty.
    pub async fn wait_idle(&self) {
        let mut rx = self.inner.busy.subscribe();
        let _ = rx.wait_for(|busy| !busy).await;
    }

    pub fn stats(&self) -> QueueStats {
        *self.inner.stats.lock().unwrap()
    }

    pub fn execution_log(&self) -> Vec<ExecutionRecord> {
        self.inner.log.lock().unwrap().clone()
    }

    pub fn interrupts(&self) -> Vec<InterruptRecord> {
        self.inner.interrupts.lock().unwrap().clone()
    }

    pub fn current_policy(&self) -> PermissionPolicy {
        self.inner.current_policy()
    }
}

impl EngineInner {
    pub(crate) fn session(&self) -> &Arc<Session> {
        &self.bundle.session
    }

    pub(crate) fn emit(&self, agent_id: &str, payload: EventPayload) {
        self.bundle.emit(agent_id, payload);
    }

    pub(crate) fn current_policy(&self) -> PermissionPolicy {
        PermissionPolicy {
            session: SessionPolicy {
                edit_allowed: self.session().edit_allowed(),
            },
            project: self.policy.project(),
        }
    }

    pub(crate) fn hook(&self, agent_id: &str, phase: InterruptPhase, call_index: Option<usize>) {
        if let Some(h) = &self.phase_hook {
            h(&PhasePoint {
                agent_id: agent_id.to_string(),
                phase,
                call_index,
            });
        }
    }

    fn set_busy(&self, busy: bool) {
        self.busy.send_replace(busy);
    }

    fn dispatch(self: &Arc<Self>, content: String) -> DispatchOutcome {
        let mut core = self.session().lock();
        self.stats.lock().unwrap().dispatched += 1;
        if core.main().exec == ExecStatus::Idle {
            self.begin_turn(&mut core);
            self.stats.lock().unwrap().processed += 1;
            drop(core);
            self.spawn_driver(Batch::from_single(content));
            DispatchOutcome::Started
        } else {
            core.global.queue.push(content);
            DispatchOutcome::Enqueued
        }
    }

    /// Marks the main agent busy and gives the turn a fresh abort signal.
    fn begin_turn(&self, core: &mut SessionCore) {
        core.main_mut().exec = ExecStatus::Processing;
        core.global.abort = CancellationToken::new();
        self.set_busy(true);
    }

    fn request_session_switch(&self, new_id: String) -> SwitchOutcome {
        let mut core = self.session().lock();
        if core.main().exec == ExecStatus::Processing {
            core.global.pending_session = Some(new_id);
            core.global.abort.cancel();
            SwitchOutcome::Staged
        } else {
            let purged = core.global.queue.len() as u64;
            *core = SessionCore::new(new_id, self.session().edit_default());
            self.stats.lock().unwrap().purged += purged;
            SwitchOutcome::Applied
        }
    }

    fn spawn_driver(self: &Arc<Self>, first: Batch) {
        let inner = self.clone();
        tokio::spawn(async move { inner.drive(first).await });
    }

    async fn drive(self: Arc<Self>, first: Batch) {
        let mut batch = first;
        loop {
            let turn = run_in_context(self.bundle.clone(), self.run_batch(batch));
            if let Err(panic) = std::panic::AssertUnwindSafe(turn).catch_unwind().await {
                let message = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "turn panicked".into());
                tracing::error!(%message, "turn panicked");
                self.emit(MAIN_AGENT, EventPayload::Error { code: "internal".into(), message });
                self.emit(MAIN_AGENT, EventPayload::SessionComplete { status: TurnStatus::Error });
            }
            match self.finalize_turn() {
                Some(next) => batch = next,
                None => break,
            }
        }
    }

    /// Runs once after every turn: applies a staged session switch, or
    /// pulls the next batch, or goes idle.
    fn finalize_turn(&self) -> Option<Batch> {
        let mut core = self.session().lock();
        if let Some(new_id) = core.global.pending_session.take() {
            let purged = core.global.queue.len() as u64;
            *core = SessionCore::new(new_id, self.session().edit_default());
            self.stats.lock().unwrap().purged += purged;
            self.set_busy(false);
            return None;
        }
        // Notices that arrived after the last user-role message become
        // queued input of their own.
        let notices = std::mem::take(&mut core.global.pending_notices);
        if !notices.is_empty() {
            self.stats.lock().unwrap().dispatched += notices.len() as u64;
            for n in notices {
                core.global.queue.push(n);
            }
        }
        match core.global.queue.dequeue_batch() {
            Some((batch, consumed)) => {
                self.stats.lock().unwrap().processed += consumed as u64;
                self.begin_turn(&mut core);
                Some(batch)
            }
            None => {
                core.main_mut().exec = ExecStatus::Idle;
                self.set_busy(false);
                None
            }
        }
    }

    async fn run_batch(self: &Arc<Self>, batch: Batch) {
        self.report_skill_warnings();
        let status = match batch {
            Batch::Prompt(text) => self.run_main_query(text).await,
            Batch::Command(cmd) => self.run_command(&cmd),
        };
        self.emit(MAIN_AGENT, EventPayload::SessionComplete { status });
    }

    fn report_skill_warnings(&self) {
        if self.warned.swap(true, Ordering::SeqCst) {
            return;
        }
        for w in self.skill_warnings.lock().unwrap().drain(..) {
            self.emit(
                MAIN_AGENT,
                EventPayload::Error {
                    code: "skill-skipped".into(),
                    message: format!("{}: {}", w.path.display(), w.message),
                },
            );
        }
    }

    fn run_command(&self, cmd: &str) -> TurnStatus {
        let mut words = cmd.split_whitespace();
        let head = words.next().unwrap_or("/");
        let arg = words.collect::<Vec<_>>().join(" ");
        let text = match head {
            "/status" => self.status_text(),
            "/new" if !arg.is_empty() => {
                self.session().lock().global.pending_session = Some(arg.clone());
                format!("Switching to session {arg}.")
            }
            "/new" => {
                return self.command_error("bad-command", "usage: /new <session-id>");
            }
            // A queued /abort runs after the turn it was meant for.
            "/abort" => "Nothing to abort.".to_string(),
            other => return self.command_error("unknown-command", &format!("unknown command {other}")),
        };
        self.emit(MAIN_AGENT, EventPayload::TextChunk { text });
        TurnStatus::Completed
    }

    fn command_error(&self, code: &str, message: &str) -> TurnStatus {
        self.emit(
            MAIN_AGENT,
            EventPayload::Error {
                code: code.into(),
                message: message.into(),
            },
        );
        TurnStatus::Error
    }

    fn status_text(&self) -> String {
        let (active, retired) = self.background.counts();
        let core = self.session().lock();
        let main = core.main();
        let todos: BTreeMap<&str, usize> = main.todos.iter().fold(BTreeMap::new(), |mut m, t| {
            let k = match t.state {
                crate::todo::TodoState::Pending => "pending",
                crate::todo::TodoState::Active => "active",
                crate::todo::TodoState::Completed => "completed",
            };
            *m.entry(k).or_default() += 1;
            m
        });
        let todos = todos
            .iter()
            .map(|(k, v)| format!("{v} {k}"))
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "session {}\nmessages: {}\ntodos: {}\nqueued: {}\nedit allowed: {}\nbackground: {} running, {} finished",
            core.id,
            main.history.len(),
            if todos.is_empty() { "none".into() } else { todos },
            core.global.queue.len(),
            core.global.edit_allowed,
            active,
            retired
        )
    }

    fn on_notice(self: &Arc<Self>, notice: TaskNotice) {
        self.emit(
            MAIN_AGENT,
            EventPayload::BackgroundNotification {
                task_id: notice.task_id.clone(),
                command: notice.command.clone(),
                status: notice.status,
                exit_code: notice.exit_code,
            },
        );
        let text = notice.render();
        {
            let mut core = self.session().lock();
            if core.main().exec == ExecStatus::Processing {
                core.global.pending_notices.push(text);
                return;
            }
        }
        self.dispatch(text);
    }
}

#[cfg(test)]
mod tests;
