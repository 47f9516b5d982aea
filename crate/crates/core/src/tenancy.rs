//! Per-instance resource bundles with task-local resolution.
//!
//! Each engine instance owns a [`ResourceBundle`]: its event bus, session
//! state, tool registry and configuration. Code running under
//! [`run_in_context`] resolves that bundle with [`resolve_resources`], across
//! any number of awaits. Outside every context resolution falls back to a
//! process-global bundle, built lazily from an installed factory, for
//! embedders that only ever run a single instance.

use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use crate::config::EngineConfig;
use crate::event::{EngineEvent, EventPayload};
use crate::state::Session;
use crate::tools::ToolRegistry;

#[derive(Debug, Default)]
pub struct EventBus {
    subscribers: Mutex<Vec<mpsc::UnboundedSender<EngineEvent>>>,
}

impl EventBus {
    pub fn subscribe(&self) -> mpsc::UnboundedReceiver<EngineEvent> {
        let (tx, rx) = mpsc::unbounded_channel();
        self.subscribers.lock().unwrap().push(tx);
        rx
    }

    pub fn publish(&self, event: EngineEvent) {
        let mut subs = self.subscribers.lock().unwrap();
        subs.retain(|tx| tx.send(event.clone()).is_ok());
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers.lock().unwrap().len()
    }
}

pub struct ResourceBundle {
    pub instance_id: String,
    pub events: EventBus,
    pub session: Arc<Session>,
    pub tools: Arc<ToolRegistry>,
    pub config: Arc<EngineConfig>,
}

impl ResourceBundle {
    pub fn new(config: Arc<EngineConfig>, tools: Arc<ToolRegistry>, session_id: impl Into<String>) -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        let edit = config.permissions.edit_allowed;
        Self {
            instance_id: format!("inst-{}", NEXT.fetch_add(1, Ordering::Relaxed)),
            events: EventBus::default(),
            session: Arc::new(Session::new(session_id, edit)),
            tools,
            config,
        }
    }

    /// Publishes `payload` stamped with the current session id.
    pub fn emit(&self, agent_id: &str, payload: EventPayload) {
        let session_id = self.session.id();
        self.events.publish(EngineEvent::new(session_id, agent_id, payload));
    }
}

impl std::fmt::Debug for ResourceBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResourceBundle")
            .field("instance_id", &self.instance_id)
            .finish_non_exhaustive()
    }
}

tokio::task_local! {
    static CURRENT: Arc<ResourceBundle>;
}

type Factory = Box<dyn Fn() -> Arc<ResourceBundle> + Send + Sync>;

static FALLBACK_FACTORY: OnceLock<Factory> = OnceLock::new();
static FALLBACK: OnceLock<Arc<ResourceBundle>> = OnceLock::new();

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no engine context and no global fallback installed")]
pub struct NoContext;

/// Installs the factory for the global fallback bundle. Only the first
/// installation takes effect; returns whether this one did.
pub fn install_fallback(factory: impl Fn() -> Arc<ResourceBundle> + Send + Sync + 'static) -> bool {
    FALLBACK_FACTORY.set(Box::new(factory)).is_ok()
}

pub fn resolve_resources() -> Result<Arc<ResourceBundle>, NoContext> {
    if let Ok(bundle) = CURRENT.try_with(Arc::clone) {
        return Ok(bundle);
    }
    if let Some(b) = FALLBACK.get() {
        return Ok(b.clone());
    }
    let factory = FALLBACK_FACTORY.get().ok_or(NoContext)?;
    Ok(FALLBACK.get_or_init(factory).clone())
}

/// The bundle of the enclosing context, if any (never the fallback).
pub fn current() -> Option<Arc<ResourceBundle>> {
    CURRENT.try_with(Arc::clone).ok()
}

pub async fn run_in_context<F: Future>(bundle: Arc<ResourceBundle>, task: F) -> F::Output {
    CURRENT.scope(bundle, task).await
}

/// `tokio::spawn` that carries the current bundle into the new task.
pub fn spawn<F>(task: F) -> JoinHandle<F::Output>
where
    F: Future + Send + 'static,
    F::Output: Send + 'static,
{
    match current() {
        Some(bundle) => tokio::spawn(CURRENT.scope(bundle, task)),
        None => tokio::spawn(task),
    }
}
