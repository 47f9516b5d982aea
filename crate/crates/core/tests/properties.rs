//! Property tests for the pure building blocks, each checked against an
//! independent oracle.

mod common;

use common::gen;
use proptest::prelude::*;
use semacore::context::{
    apply_compression, effective_context_size, partition_history, safe_truncate, should_compress, ContextBudget,
};
use semacore::event::{deserialize_event, serialize_event, EngineEvent};
use semacore::model::validate_history;
use semacore::permissions::{evaluate_bash, BashVerdict, Whitelist};
use semacore::queue::{Batch, SessionQueue};
use semacore::todo::{apply_todo_update, TodoItem, TodoState, UpdateKind};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn events_round_trip(payload in gen::event_payload(), session in ".{0,8}", agent in ".{0,8}") {
        let event = EngineEvent::new(session, agent, payload);
        let frame = serialize_event(&event);
        let back = deserialize_event(&frame).unwrap();
        prop_assert_eq!(&back, &event);
        prop_assert_eq!(serialize_event(&back), frame);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn bash_verdict_matches_oracle(p in gen::pipeline(), entries in gen::whitelist_entries()) {
        let w = Whitelist::new(entries.iter().cloned());
        let expected = gen::oracle_unmatched(&p, &entries);
        match evaluate_bash(&p.command, &w) {
            BashVerdict::Allow => prop_assert!(expected.is_empty(), "{} allowed, oracle {:?}", p.command, expected),
            BashVerdict::Request { unmatched, .. } => prop_assert_eq!(unmatched, expected, "{}", p.command),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn compression_and_truncation_keep_histories_valid(
        history in gen::history(),
        limit in 1_000u64..200_000,
    ) {
        prop_assert!(validate_history(&history).is_ok());
        let budget = ContextBudget::new(limit);

        let part = partition_history(&history).unwrap();
        prop_assert!(part.keep[0].is_user_initiated());
        prop_assert!(part.keep[1..].iter().all(|m| !m.is_user_initiated()));
        prop_assert_eq!([part.hist.clone(), part.keep.clone()].concat(), history.clone());
        let compressed = apply_compression("summary", part.keep, &[]);
        prop_assert!(validate_history(&compressed).is_ok(), "{:?}", validate_history(&compressed));

        let truncated = safe_truncate(&history, &budget);
        prop_assert!(validate_history(&truncated).is_ok(), "{:?}", validate_history(&truncated));
        let latest = effective_context_size(&truncated, &budget) - budget.forward_buffer;
        let original = effective_context_size(&history, &budget) - budget.forward_buffer;
        if original > limit / 2 {
            prop_assert!(latest <= limit / 2);
        } else {
            prop_assert_eq!(truncated, history);
        }
    }

    #[test]
    fn trigger_is_strict_threshold(limit in 1u64..1_000_000, size in 0u64..1_000_000) {
        let budget = ContextBudget::new(limit);
        // Integer oracle for size > 0.75 * limit.
        prop_assert_eq!(should_compress(size, &budget), 4 * size > 3 * limit);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn todo_sequences_follow_the_rules(updates in prop::collection::vec(gen::todo_list(6), 1..12)) {
        let mut current: Vec<TodoItem> = Vec::new();
        for (round, spec) in updates.iter().enumerate() {
            let incoming = gen::materialize(spec, round);
            let got = apply_todo_update(&current, &incoming);
            let want = gen::expected_update(&current, &incoming);
            match (got, want) {
                (Ok(got), Ok(want)) => {
                    if got.1 == UpdateKind::Subset {
                        for (a, b) in got.0.iter().zip(&current) {
                            prop_assert_eq!(a.content.as_bytes(), b.content.as_bytes());
                        }
                    }
                    prop_assert_eq!(&got, &want);
                    current = got.0;
                }
                (Err(e), Err(rule)) => prop_assert_eq!(e.rule(), rule),
                (got, want) => prop_assert!(false, "got {:?}, oracle {:?}", got, want),
            }
            prop_assert!(current.iter().filter(|i| i.state == TodoState::Active).count() <= 1);
        }
    }

    #[test]
    fn queue_preserves_order(items in prop::collection::vec((any::<bool>(), "[a-z]{1,4}"), 0..30)) {
        let mut q = SessionQueue::default();
        let contents: Vec<String> = items
            .iter()
            .map(|(cmd, s)| if *cmd { format!("/{s}") } else { s.clone() })
            .collect();
        for c in &contents {
            q.push(c.clone());
        }
        let mut replay = Vec::new();
        let mut consumed = 0;
        while let Some((batch, n)) = q.dequeue_batch() {
            consumed += n;
            match batch {
                Batch::Command(c) => {
                    prop_assert_eq!(n, 1);
                    replay.push(c);
                }
                Batch::Prompt(p) => {
                    let parts: Vec<String> = p.split('\n').map(str::to_string).collect();
                    prop_assert_eq!(parts.len(), n);
                    prop_assert!(parts.iter().all(|s| !s.starts_with('/')));
                    replay.extend(parts);
                }
            }
        }
        prop_assert_eq!(consumed, contents.len());
        prop_assert_eq!(replay, contents);
    }
}
