use serde_json::json;

use super::*;
use crate::adapters::{MockAdapter, MockScript};
use crate::model::validate_history;

fn engine(dir: &Path, script: serde_json::Value) -> (Engine, MockAdapter) {
    let mock = MockAdapter::new(MockScript::from_json(&script.to_string()).unwrap());
    let config = EngineConfig {
        workspace: dir.to_owned(),
        ..EngineConfig::default()
    };
    let engine = Engine::builder(config).adapter(Arc::new(mock.clone())).build().unwrap();
    (engine, mock)
}

async fn drain(rx: &mut mpsc::UnboundedReceiver<EngineEvent>) -> Vec<EngineEvent> {
    let mut out = Vec::new();
    while let Ok(e) = rx.try_recv() {
        out.push(e);
    }
    out
}

#[tokio::test]
async fn text_only_turn_completes() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, mock) = engine(dir.path(), json!({"turns": [[{"text": "hello"}, {"usage": 10}]]}));
    let mut rx = engine.subscribe();
    assert_eq!(engine.dispatch("hi"), DispatchOutcome::Started);
    engine.wait_idle().await;
    let events = drain(&mut rx).await;
    let kinds: Vec<_> = events.iter().map(|e| e.payload.type_name()).collect();
    assert_eq!(kinds, vec!["text_chunk", "token_stats", "session_complete"]);
    assert_eq!(mock.requests().len(), 1);
    let history = engine.session().history(MAIN_AGENT);
    assert_eq!(history.len(), 2);
    validate_history(&history).unwrap();
}

#[tokio::test]
async fn tool_call_then_answer() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.txt"), "content").unwrap();
    let (engine, mock) = engine(
        dir.path(),
        json!({"turns": [
            [{"tool_call": {"id": "c1", "name": "read_file", "args": {"path": "a.txt"}}}, {"usage": 10}],
            [{"text": "done"}, {"usage": 20}]
        ]}),
    );
    let mut rx = engine.subscribe();
    engine.dispatch("read it");
    engine.wait_idle().await;
    let kinds: Vec<_> = drain(&mut rx).await.iter().map(|e| e.payload.type_name()).collect();
    assert_eq!(
        kinds,
        vec!["token_stats", "tool_call_started", "tool_result", "text_chunk", "token_stats", "session_complete"]
    );
    assert_eq!(mock.requests().len(), 2);
    let history = engine.session().history(MAIN_AGENT);
    assert_eq!(history.len(), 4);
    validate_history(&history).unwrap();
}

#[tokio::test]
async fn commands_run_individually() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = engine(dir.path(), json!({"turns": []}));
    let mut rx = engine.subscribe();
    engine.dispatch("/status");
    engine.wait_idle().await;
    engine.dispatch("/bogus");
    engine.wait_idle().await;
    let events = drain(&mut rx).await;
    assert!(matches!(&events[0].payload, EventPayload::TextChunk { text } if text.starts_with("session default")));
    assert!(matches!(&events[2].payload, EventPayload::Error { code, .. } if code == "unknown-command"));
}

#[tokio::test]
async fn idle_switch_applies_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = engine(dir.path(), json!({"turns": [[{"text": "x"}, {"usage": 1}]]}));
    engine.dispatch("hi");
    engine.wait_idle().await;
    assert_eq!(engine.request_session_switch("s2"), SwitchOutcome::Applied);
    assert_eq!(engine.session().dump(), engine.session().fresh_dump("s2"));
}

#[tokio::test]
async fn sub_agent_toolset_lacks_delegation() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = engine(dir.path(), json!({"turns": []}));
    assert!(engine.tools().get(DELEGATION_TOOL).is_some());
    assert!(engine.sub_agent_tools().get(DELEGATION_TOOL).is_none());
}

#[test]
fn invalid_config_is_rejected() {
    let mut config = EngineConfig::default();
    config.context.limit = 0;
    let err = Engine::builder(config).build().err().unwrap();
    assert_eq!(err.code(), "invalid-config");
}
