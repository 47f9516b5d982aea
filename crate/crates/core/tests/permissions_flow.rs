//! Approval lifecycle through the live engine.

mod common;

use common::*;
use semacore::config::ExternalToolConfig;
use semacore::event::{EngineEvent, EventPayload, TurnStatus};
use semacore::permissions::{read_policy, PermissionLayer, PolicyStore, Resolution, ResolutionKind};
use semacore::runtime::Authorization;
use semacore::state::MAIN_AGENT;
use semacore::Engine;
use serde_json::{json, Value};

fn bash(id: &str, command: &str) -> Value {
    json!({"tool_call": {"id": id, "name": "bash", "args": {"command": command}}})
}

fn call_turn(call: Value) -> Value {
    json!([call, {"usage": 1}])
}

fn done() -> Value {
    json!([{"text": "done"}, {"usage": 2}])
}

fn requests(events: &[EngineEvent]) -> Vec<(PermissionLayer, String)> {
    events
        .iter()
        .filter_map(|e| match &e.payload {
            EventPayload::PermissionRequest { layer, summary, .. } => Some((*layer, summary.clone())),
            _ => None,
        })
        .collect()
}

fn result_for<'a>(events: &'a [EngineEvent], id: &str) -> (&'a str, bool, bool) {
    events
        .iter()
        .find_map(|e| match &e.payload {
            EventPayload::ToolResult {
                call_id,
                content,
                is_error,
                is_user_refusal,
                ..
            } if call_id == id => Some((content.as_str(), *is_error, *is_user_refusal)),
            _ => None,
        })
        .expect("result present")
}

fn status(events: &[EngineEvent]) -> TurnStatus {
    match events.last().unwrap().payload {
        EventPayload::SessionComplete { status } => status,
        _ => panic!("not a completed turn"),
    }
}

/// Every gated execution carries an authorization.
fn audit(engine: &Engine) {
    for rec in engine.execution_log() {
        if rec.layer.is_some() {
            assert_ne!(rec.authorization, Authorization::NotGated, "{rec:?}");
        }
    }
}

async fn run(engine: &Engine, prompt: &str, answers: Vec<Resolution>) -> Vec<EngineEvent> {
    let mut rx = engine.subscribe();
    let resolver = auto_resolve(engine, engine.subscribe(), answers);
    engine.dispatch(prompt);
    let events = until_complete(&mut rx).await;
    resolver.abort();
    events
}

#[tokio::test]
async fn transient_allow_asks_every_time() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = engine(
        dir.path(),
        json!({"turns": [
            call_turn(bash("b1", "touch one.txt")), done(),
            call_turn(bash("b2", "touch two.txt")), done()
        ]}),
    );
    let first = run(&engine, "make one", vec![allow_once()]).await;
    assert_eq!(requests(&first), [(PermissionLayer::L2, "run shell command: touch one.txt".into())]);
    assert!(dir.path().join("one.txt").exists());
    assert_eq!(status(&first), TurnStatus::Completed);

    let second = run(&engine, "make two", vec![allow_once()]).await;
    assert_eq!(requests(&second).len(), 1);
    assert!(dir.path().join("two.txt").exists());
    assert!(!PolicyStore::policy_path(dir.path()).exists());
    audit(&engine);
}

#[tokio::test]
async fn persistent_allow_survives_reload() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = engine(
        dir.path(),
        json!({"turns": [
            call_turn(bash("b1", "touch a.txt")), done(),
            call_turn(bash("b2", "touch b.txt")), done()
        ]}),
    );
    let first = run(&engine, "a", vec![Resolution::new(ResolutionKind::PersistentAllow)]).await;
    assert_eq!(requests(&first).len(), 1);
    let stored = read_policy(&PolicyStore::policy_path(dir.path())).unwrap();
    assert!(stored.bash_whitelist.contains("touch"));

    let second = run(&engine, "b", vec![]).await;
    assert!(requests(&second).is_empty());
    assert!(dir.path().join("b.txt").exists());
    audit(&engine);

    // A fresh engine on the same workspace reads the grant back.
    let (reloaded, _) = common::engine(dir.path(), json!({"turns": [call_turn(bash("b3", "touch c.txt")), done()]}));
    assert!(reloaded.current_policy().project.bash_whitelist.contains("touch"));
    let third = run(&reloaded, "c", vec![]).await;
    assert!(requests(&third).is_empty());
    assert!(dir.path().join("c.txt").exists());
    audit(&reloaded);
}

#[tokio::test]
async fn persistent_edit_grant_is_session_scoped() {
    let dir = tempfile::tempdir().unwrap();
    let edit = |id: &str, path: &str| {
        json!({"tool_call": {"id": id, "name": "edit_file", "args": {"path": path, "old": "", "new": "x"}}})
    };
    let (engine, _) = engine(
        dir.path(),
        json!({"turns": [
            call_turn(edit("e1", "a.txt")), done(),
            call_turn(edit("e2", "b.txt")), done(),
            call_turn(edit("e3", "c.txt")), done()
        ]}),
    );
    let first = run(&engine, "a", vec![Resolution::new(ResolutionKind::PersistentAllow)]).await;
    assert_eq!(requests(&first)[0].0, PermissionLayer::L1);
    assert!(engine.session().edit_allowed());
    assert!(requests(&run(&engine, "b", vec![]).await).is_empty());

    // A session switch rebuilds state from the configured default.
    engine.request_session_switch("s2");
    let third = run(&engine, "c", vec![allow_once()]).await;
    assert_eq!(requests(&third).len(), 1);
    assert!(dir.path().join("c.txt").exists());
    assert!(!PolicyStore::policy_path(dir.path()).exists());
    audit(&engine);
}

#[tokio::test]
async fn reject_aborts_and_keeps_the_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = engine(
        dir.path(),
        json!({"turns": [
            [bash("b1", "touch no.txt"), bash("b2", "touch later.txt"), {"usage": 1}],
            done()
        ]}),
    );
    let events = run(&engine, "try", vec![Resolution::new(ResolutionKind::Reject)]).await;
    assert_eq!(status(&events), TurnStatus::Aborted);
    assert!(!dir.path().join("no.txt").exists());
    assert!(!dir.path().join("later.txt").exists());
    let (content, is_error, refusal) = result_for(&events, "b1");
    assert_eq!((content, is_error, refusal), ("The user rejected this operation.", false, true));
    let (content, _, refusal) = result_for(&events, "b2");
    assert_eq!((content, refusal), ("cancelled", false));

    let history = engine.session().history(MAIN_AGENT);
    semacore::model::validate_history(&history).unwrap();
    assert_eq!(requests(&events).len(), 1);
    audit(&engine);
}

#[tokio::test]
async fn guided_correction_feeds_back_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, mock) = engine(
        dir.path(),
        json!({"turns": [call_turn(bash("b1", "rm notes.txt")), done()]}),
    );
    std::fs::write(dir.path().join("notes.txt"), "keep").unwrap();
    let events = run(&engine, "clean", vec![Resolution::guided("move it to archive/ instead")]).await;
    assert_eq!(status(&events), TurnStatus::Completed);
    assert!(dir.path().join("notes.txt").exists());
    let (content, is_error, refusal) = result_for(&events, "b1");
    assert!(content.ends_with("move it to archive/ instead"));
    assert!(!is_error && refusal);
    // The model saw the guidance as the tool result.
    let seen = &mock.requests()[1].history;
    assert!(seen.last().unwrap().blocks.iter().any(|b| matches!(
        b,
        semacore::model::ContentBlock::ToolResult { content, .. } if content.contains("archive/")
    )));
    audit(&engine);
}

#[tokio::test]
async fn whitelisted_and_blocked_commands_skip_the_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = build(
        dir.path(),
        json!({"turns": [
            [bash("ok", "echo hi | cat"), bash("bad", "echo bye && rm -rf /"), {"usage": 1}],
            done()
        ]}),
        |mut c| {
            c.permissions.bash_whitelist = vec!["echo".into(), "cat".into()];
            c
        },
        |b| b,
    );
    let events = run(&engine, "go", vec![]).await;
    assert!(requests(&events).is_empty());
    assert_eq!(result_for(&events, "ok").0.trim(), "hi");
    let (content, is_error, _) = result_for(&events, "bad");
    assert!(is_error && content.starts_with("permission-denied"));
    audit(&engine);
}

#[tokio::test]
async fn skill_loading_is_gated_and_reshapes_the_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let skills = dir.path().join(".sema/skills");
    std::fs::create_dir_all(&skills).unwrap();
    std::fs::write(
        skills.join("review.md"),
        "---\ndescription: Careful code review\n---\nAlways cite line numbers.\n",
    )
    .unwrap();
    let skill = json!({"tool_call": {"id": "s1", "name": "skill", "args": {"name": "review"}}});
    let (engine, mock) = engine(dir.path(), json!({"turns": [call_turn(skill.clone()), done(), call_turn(skill), done()]}));

    let first = run(&engine, "review", vec![Resolution::new(ResolutionKind::PersistentAllow)]).await;
    assert_eq!(requests(&first), [(PermissionLayer::L3, "load skill review".into())]);
    let reqs = mock.requests();
    assert!(reqs[0].system_prompt.contains("Careful code review"));
    assert!(!reqs[0].system_prompt.contains("Always cite line numbers."));
    assert!(reqs[1].system_prompt.contains("Always cite line numbers."));
    let stored = read_policy(&PolicyStore::policy_path(dir.path())).unwrap();
    assert!(stored.authorized_skills.contains("review"));

    let second = run(&engine, "again", vec![]).await;
    assert!(requests(&second).is_empty());
    audit(&engine);
}

#[tokio::test]
async fn external_tools_are_gated_at_l4() {
    let dir = tempfile::tempdir().unwrap();
    let call = |id: &str| json!({"tool_call": {"id": id, "name": "tracker", "args": {"q": "open"}}});
    let (engine, _) = build(
        dir.path(),
        json!({"turns": [call_turn(call("x1")), done(), call_turn(call("x2")), done()]}),
        |mut c| {
            c.external_tools = vec![ExternalToolConfig {
                name: "tracker".into(),
                description: "Issue tracker".into(),
                response: "3 open issues".into(),
            }];
            c
        },
        |b| b,
    );
    let first = run(&engine, "issues?", vec![allow_once()]).await;
    assert_eq!(requests(&first), [(PermissionLayer::L4, "call external tool tracker".into())]);
    assert_eq!(result_for(&first, "x1").0, "3 open issues");
    let second = run(&engine, "again", vec![Resolution::new(ResolutionKind::PersistentAllow)]).await;
    assert_eq!(requests(&second).len(), 1);
    assert!(engine.current_policy().project.authorized_externals.contains("tracker"));
    audit(&engine);
}
