//! The interrupt matrix: every plan aborted at every phase.

use std::sync::Arc;

use semacore::event::{EventPayload, TurnStatus};
use semacore::model::validate_history;
use semacore::permissions::{Resolution, ResolutionKind};
use semacore::runtime::{InterruptPhase, PhaseHook, CANCELLED};
use semacore::state::MAIN_AGENT;
use serde_json::{json, Value};

use super::*;

pub struct Plan {
    pub calls: Vec<Value>,
    pub answer: Option<Resolution>,
    pub edit_allowed: bool,
}

pub fn plans() -> Vec<Plan> {
    let read = |id: &str, p: &str| call(id, "read_file", json!({"path": p}));
    vec![
        Plan {
            calls: vec![read("r1", "a.txt"), read("r2", "b.txt"), read("r3", "a.txt")],
            answer: None,
            edit_allowed: false,
        },
        Plan {
            calls: vec![
                call("g1", "grep", json!({"pattern": "x"})),
                call("e1", "edit_file", json!({"path": "a.txt", "old": "alpha", "new": "beta"})),
                call("g2", "grep", json!({"pattern": "y"})),
            ],
            answer: None,
            edit_allowed: true,
        },
        Plan {
            calls: vec![call("b1", "bash", json!({"command": "echo hi"})), read("r1", "a.txt")],
            answer: None,
            edit_allowed: false,
        },
        Plan {
            calls: vec![
                call("e1", "edit_file", json!({"path": "a.txt", "old": "alpha", "new": "beta"})),
                read("r1", "a.txt"),
                read("r2", "b.txt"),
            ],
            answer: Some(Resolution::new(ResolutionKind::Reject)),
            edit_allowed: false,
        },
        Plan {
            calls: vec![
                call("b1", "bash", json!({"command": "rm -rf build"})),
                call("t1", "todo_write", json!({"todos": [{"id": "1", "content": "clean", "state": "active"}]})),
                read("r1", "a.txt"),
            ],
            answer: Some(Resolution::guided("use trash instead")),
            edit_allowed: false,
        },
    ]
}

pub const PHASES: [InterruptPhase; 4] = [
    InterruptPhase::PostInferenceDispatch,
    InterruptPhase::PreExecution,
    InterruptPhase::ActiveExecution,
    InterruptPhase::RecursionTermination,
];

pub async fn run_with_abort_at(plan: &Plan, phase: InterruptPhase) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.txt"), "alpha x\n").unwrap();
    std::fs::write(dir.path().join("b.txt"), "beta y\n").unwrap();
    let target = plan.calls.len() - 1;
    let slot = SessionSlot::default();
    let hook_slot = slot.clone();
    let hook: PhaseHook = Arc::new(move |p| {
        let hit = p.agent_id == MAIN_AGENT
            && p.phase == phase
            && p.call_index.is_none_or(|i| i == target);
        if hit {
            hook_slot.trip();
        }
    });
    let mut turn1 = plan.calls.clone();
    turn1.push(json!({"usage": 10}));
    let edit_allowed = plan.edit_allowed;
    let (engine, _) = build(
        dir.path(),
        json!({"turns": [turn1, [{"text": "resumed"}, {"usage": 20}]]}),
        |mut c| {
            c.permissions.bash_whitelist = vec!["echo".into()];
            c.permissions.edit_allowed = edit_allowed;
            c
        },
        |b| b.phase_hook(hook),
    );
    slot.set(&engine);
    if let Some(answer) = &plan.answer {
        auto_resolve(&engine, engine.subscribe(), vec![answer.clone()]);
    }
    let mut rx = engine.subscribe();
    engine.dispatch("go");
    let events = until_complete(&mut rx).await;
    assert!(
        matches!(events.last().unwrap().payload, EventPayload::SessionComplete { status: TurnStatus::Aborted }),
        "{phase:?}"
    );
    engine.wait_idle().await;

    let history = engine.session().history(MAIN_AGENT);
    validate_history(&history).unwrap_or_else(|v| panic!("{phase:?}: {v:?}"));
    let r = results(&history);
    assert_eq!(r.len(), plan.calls.len(), "{phase:?}: every call answered");

    // A rejection trips the abort itself, before the injected one.
    let rejecting = plan.answer.as_ref().is_some_and(|a| a.kind == ResolutionKind::Reject);
    let interrupts = engine.interrupts();
    assert_eq!(interrupts.len(), 1, "{phase:?}: one attribution");
    if !rejecting {
        assert_eq!(interrupts[0].phase, phase);
    }
    let refused = r.iter().filter(|x| x.3).count();
    match phase {
        InterruptPhase::PostInferenceDispatch => {
            assert!(r.iter().all(|x| x.1 == CANCELLED && x.2 && !x.3));
        }
        InterruptPhase::RecursionTermination if !rejecting => {
            assert!(r.iter().all(|x| x.1 != CANCELLED));
        }
        _ => {
            assert_eq!(r.last().unwrap().1, CANCELLED, "{phase:?}: last call placeheld");
        }
    }
    if plan.answer.is_some() && phase != InterruptPhase::PostInferenceDispatch {
        assert_eq!(refused, 1, "{phase:?}: refusal kept");
    }

    // A later query still sees the refusal.
    engine.dispatch("continue");
    until_complete(&mut rx).await;
    let after = engine.session().history(MAIN_AGENT);
    validate_history(&after).unwrap();
    assert_eq!(results(&after).iter().filter(|x| x.3).count(), refused);
}
