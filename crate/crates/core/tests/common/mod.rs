//! Helpers shared by the engine integration tests.
#![allow(dead_code)]

pub mod gen;
pub mod matrix;

use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use async_trait::async_trait;
use semacore::adapters::{MockAdapter, MockScript};
use semacore::config::EngineConfig;
use semacore::event::{EngineEvent, EventPayload};
use semacore::model::{ContentBlock, Message};
use semacore::permissions::{Resolution, ResolutionKind};
use semacore::state::Session;
use semacore::tools::{Tool, ToolContext, ToolError, ToolKind};
use semacore::{Engine, EngineBuilder};
use serde_json::{json, Value};
use tokio::sync::mpsc::UnboundedReceiver;

pub fn mock(script: Value) -> MockAdapter {
    MockAdapter::new(MockScript::from_json(&script.to_string()).expect("valid script"))
}

pub fn config(dir: &Path) -> EngineConfig {
    EngineConfig {
        workspace: dir.to_owned(),
        ..EngineConfig::default()
    }
}

pub fn build(
    dir: &Path,
    script: Value,
    tweak: impl FnOnce(EngineConfig) -> EngineConfig,
    extra: impl FnOnce(EngineBuilder) -> EngineBuilder,
) -> (Engine, MockAdapter) {
    let mock = mock(script);
    let builder = Engine::builder(tweak(config(dir))).adapter(Arc::new(mock.clone()));
    (extra(builder).build().expect("engine builds"), mock)
}

pub fn engine(dir: &Path, script: Value) -> (Engine, MockAdapter) {
    build(dir, script, |c| c, |b| b)
}

/// Receives events up to and including the next `session_complete`.
pub async fn until_complete(rx: &mut UnboundedReceiver<EngineEvent>) -> Vec<EngineEvent> {
    let mut out = Vec::new();
    loop {
        let e = tokio::time::timeout(Duration::from_secs(10), rx.recv())
            .await
            .expect("turn finishes in time")
            .expect("bus open");
        let done = matches!(e.payload, EventPayload::SessionComplete { .. });
        out.push(e);
        if done {
            return out;
        }
    }
}

pub fn drain(rx: &mut UnboundedReceiver<EngineEvent>) -> Vec<EngineEvent> {
    let mut out = Vec::new();
    while let Ok(e) = rx.try_recv() {
        out.push(e);
    }
    out
}

pub fn kinds(events: &[EngineEvent]) -> Vec<&'static str> {
    events.iter().map(|e| e.payload.type_name()).collect()
}

/// Answers every permission request on `rx` with the next resolution from
/// `answers` (the last one repeats).
pub fn auto_resolve(
    engine: &Engine,
    mut rx: UnboundedReceiver<EngineEvent>,
    answers: Vec<Resolution>,
) -> tokio::task::JoinHandle<()> {
    let engine = engine.clone();
    tokio::spawn(async move {
        let mut i = 0;
        while let Some(e) = rx.recv().await {
            if let EventPayload::PermissionRequest { request_id, summary, .. } = e.payload {
                assert!(!answers.is_empty(), "unexpected permission request: {summary}");
                let r = answers[i.min(answers.len() - 1)].clone();
                i += 1;
                engine.resolve(&request_id, r).expect("request is pending");
            }
        }
    })
}

pub fn allow_once() -> Resolution {
    Resolution::new(ResolutionKind::TransientAllow)
}

/// Late-bound session handle for phase hooks, which are installed before
/// the engine exists.
#[derive(Clone, Default)]
pub struct SessionSlot(Arc<OnceLock<Arc<Session>>>);

impl SessionSlot {
    pub fn set(&self, engine: &Engine) {
        let _ = self.0.set(engine.session());
    }

    pub fn trip(&self) {
        self.0.get().expect("slot filled").trip_abort();
    }
}

/// Wraps a tool with a fixed delay before the handler runs.
pub struct Slow {
    pub inner: Arc<dyn Tool>,
    pub delay: Duration,
}

#[async_trait]
impl Tool for Slow {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn description(&self) -> &str {
        self.inner.description()
    }
    fn parameters(&self) -> Value {
        self.inner.parameters()
    }
    fn kind(&self) -> ToolKind {
        self.inner.kind()
    }
    fn operation(&self, args: &Value) -> Option<semacore::permissions::Operation> {
        self.inner.operation(args)
    }
    async fn invoke(&self, args: Value, ctx: &ToolContext) -> Result<String, ToolError> {
        tokio::time::sleep(self.delay).await;
        self.inner.invoke(args, ctx).await
    }
}

pub fn call(id: &str, name: &str, args: Value) -> Value {
    json!({"tool_call": {"id": id, "name": name, "args": args}})
}

/// (call id, content, is_error, is_user_refusal) of every tool result.
pub fn results(history: &[Message]) -> Vec<(String, String, bool, bool)> {
    history
        .iter()
        .flat_map(|m| m.blocks.iter())
        .filter_map(|b| match b {
            ContentBlock::ToolResult {
                call_id,
                content,
                is_error,
                is_user_refusal,
            } => Some((call_id.clone(), content.clone(), *is_error, *is_user_refusal)),
            _ => None,
        })
        .collect()
}
