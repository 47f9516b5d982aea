//! Input dispatch, batching through the live engine, session switches.

mod common;

use std::sync::Arc;
use std::time::Duration;

use common::*;
use rand::{Rng, SeedableRng};
use semacore::event::{EventPayload, TurnStatus};
use semacore::model::ContentBlock;
use semacore::state::MAIN_AGENT;
use semacore::tools::ReadFileTool;
use semacore::{DispatchOutcome, SwitchOutcome};
use serde_json::json;

fn text_turns(n: usize) -> serde_json::Value {
    let turns: Vec<_> = (0..n).map(|i| json!([{"text": format!("answer {i}")}, {"usage": 10 + i}])).collect();
    json!({ "turns": turns })
}

#[tokio::test]
async fn busy_session_queues_and_batches() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, mock) = engine(
        dir.path(),
        json!({"turns": [
            [{"delay_ms": 200}, {"text": "first"}, {"usage": 1}],
            [{"text": "merged"}, {"usage": 2}],
            [{"text": "D"}, {"usage": 3}]
        ]}),
    );
    let mut rx = engine.subscribe();
    assert_eq!(engine.dispatch("start"), DispatchOutcome::Started);
    assert_eq!(engine.dispatch("A"), DispatchOutcome::Enqueued);
    assert_eq!(engine.dispatch("B"), DispatchOutcome::Enqueued);
    assert_eq!(engine.dispatch("/status"), DispatchOutcome::Enqueued);
    assert_eq!(engine.dispatch("D"), DispatchOutcome::Enqueued);
    assert_eq!(engine.session().lock().global.queue.len(), 4);
    for _ in 0..4 {
        until_complete(&mut rx).await;
    }
    engine.wait_idle().await;

    let prompts: Vec<String> = mock
        .requests()
        .iter()
        .map(|r| r.history.iter().rev().find(|m| m.is_user()).unwrap().text())
        .collect();
    assert_eq!(prompts, ["start", "A\nB", "D"]);
    let stats = engine.stats();
    assert_eq!((stats.dispatched, stats.processed, stats.purged), (5, 5, 0));
}

#[tokio::test]
async fn abort_without_switch_keeps_queue() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, mock) = engine(
        dir.path(),
        json!({"turns": [
            [{"text": "slow"}, {"delay_ms": 3000}, {"usage": 1}],
            [{"text": "next"}, {"usage": 2}]
        ]}),
    );
    let mut rx = engine.subscribe();
    engine.dispatch("one");
    engine.dispatch("two");
    while !matches!(rx.recv().await.unwrap().payload, EventPayload::TextChunk { .. }) {}
    engine.abort();
    let first = until_complete(&mut rx).await;
    assert!(matches!(
        first.last().unwrap().payload,
        EventPayload::SessionComplete { status: TurnStatus::Aborted }
    ));
    // The queued item still runs.
    let second = until_complete(&mut rx).await;
    assert!(matches!(
        second.last().unwrap().payload,
        EventPayload::SessionComplete { status: TurnStatus::Completed }
    ));
    assert_eq!(mock.requests().len(), 2);
}

#[tokio::test]
async fn switch_during_parallel_reads_leaves_no_residue() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.txt"), "alpha").unwrap();
    let read = |id: &str| json!({"tool_call": {"id": id, "name": "read_file", "args": {"path": "a.txt"}}});
    let (engine, _) = build(
        dir.path(),
        json!({"turns": [
            [{"tool_call": {"id": "t", "name": "todo_write", "args": {"todos": [{"id": "1", "content": "x", "state": "active"}]}}}, {"usage": 1}],
            [read("r1"), read("r2"), read("r3"), {"usage": 2}],
            [{"text": "never"}, {"usage": 3}]
        ]}),
        |c| c,
        |b| {
            b.tool(Arc::new(Slow {
                inner: Arc::new(ReadFileTool),
                delay: Duration::from_millis(300),
            }))
        },
    );
    let mut rx = engine.subscribe();
    engine.dispatch("go");
    let mut started = 0;
    while started < 3 {
        if let EventPayload::ToolCallStarted { tool_name, .. } = rx.recv().await.unwrap().payload {
            if tool_name == "read_file" {
                started += 1;
            }
        }
    }
    engine.dispatch("queued one");
    engine.dispatch("queued two");
    assert_eq!(engine.request_session_switch("s2"), SwitchOutcome::Staged);
    engine.wait_idle().await;

    let session = engine.session();
    assert_eq!(session.dump(), session.fresh_dump("s2"));
    assert_eq!(engine.session_id(), "s2");
    let stats = engine.stats();
    assert_eq!(stats.purged, 2);
    assert_eq!(stats.dispatched, stats.processed + stats.purged);
}

#[tokio::test]
async fn new_command_switches_after_the_turn() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = engine(dir.path(), text_turns(1));
    let mut rx = engine.subscribe();
    engine.dispatch("hello");
    until_complete(&mut rx).await;
    engine.dispatch("/new fresh");
    let events = until_complete(&mut rx).await;
    assert!(matches!(&events[0].payload, EventPayload::TextChunk { text } if text.contains("fresh")));
    engine.wait_idle().await;
    assert_eq!(engine.session().dump(), engine.session().fresh_dump("fresh"));
}

#[tokio::test]
async fn events_after_switch_carry_new_session_id() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, _) = engine(dir.path(), text_turns(2));
    let mut rx = engine.subscribe();
    engine.dispatch("a");
    assert_eq!(until_complete(&mut rx).await[0].session_id, "default");
    engine.request_session_switch("s2");
    engine.dispatch("b");
    assert_eq!(until_complete(&mut rx).await[0].session_id, "s2");
}

/// Counting oracle: every dispatched item is either processed by some
/// turn or purged by a switch.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn dispatch_races_lose_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (engine, mock) = engine(dir.path(), text_turns(100));
    let mut tasks = Vec::new();
    for t in 0..4u64 {
        let engine = engine.clone();
        tasks.push(tokio::spawn(async move {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(t);
            for i in 0..25 {
                engine.dispatch(format!("msg-{t}-{i}"));
                if rng.gen_bool(0.5) {
                    tokio::time::sleep(Duration::from_micros(rng.gen_range(0..300))).await;
                }
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    engine.wait_idle().await;
    let stats = engine.stats();
    assert_eq!(stats.dispatched, 100);
    assert_eq!(stats.processed + stats.purged, 100);
    assert_eq!(stats.purged, 0);

    // Every message reached the model exactly once.
    let mut seen: Vec<String> = mock
        .requests()
        .iter()
        .flat_map(|r| {
            let last = r.history.iter().rev().find(|m| m.is_user()).unwrap().clone();
            last.blocks
                .into_iter()
                .filter_map(|b| match b {
                    ContentBlock::Text { text } => Some(text),
                    _ => None,
                })
                .flat_map(|t| t.lines().map(str::to_string).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        })
        .collect();
    seen.sort();
    let mut expected: Vec<String> = (0..4).flat_map(|t| (0..25).map(move |i| format!("msg-{t}-{i}"))).collect();
    expected.sort();
    assert_eq!(seen, expected);
    assert_eq!(engine.session().history(MAIN_AGENT).len(), 2 * mock.requests().len());
}
