//! Random generators with independent oracles, shared by the property
//! tests and the acceptance suite.
#![allow(dead_code)]

use proptest::prelude::*;
use semacore::background::TaskStatus;
use semacore::event::{EventPayload, StatsStage, TurnStatus};
use semacore::model::{ContentBlock, Message, UsageMetadata};
use semacore::permissions::PermissionLayer;
use semacore::todo::{TodoItem, TodoState, UpdateKind};
use serde_json::json;

pub const HEADS: [&str; 20] = [
    "ls", "cat", "git", "grep", "find", "echo", "rm", "curl", "npm", "cargo", "python", "make", "sed", "awk", "head",
    "tail", "wc", "sort", "mv", "cp",
];

/// Multi-word entries that may join the single-word ones.
pub const COMPOUND: [&str; 4] = ["git status", "cargo test", "npm run", "git log"];

const WORDS: [&str; 6] = ["status", "test", "run", "log", "x", "src"];

/// One generated simple command: its rendered shell text plus the words the
/// shell would see once quotes are removed.
#[derive(Debug, Clone)]
pub struct GenSub {
    pub raw: String,
    pub head: String,
    pub args: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GenPipeline {
    pub command: String,
    pub subs: Vec<GenSub>,
}

/// Generated word as (rendered, value).
fn word() -> impl Strategy<Value = (String, String)> {
    let plain = prop::sample::select(WORDS.to_vec()).prop_map(|w| (w.to_string(), w.to_string()));
    let single = "[a-z|&; ]{1,6}".prop_map(|v| (format!("'{v}'"), v));
    let double = "[a-z|&;' ]{1,6}".prop_map(|v| (format!("\"{v}\""), v));
    let escaped = prop::sample::select(vec!["|", ";", "&"]).prop_map(|v| (format!("\\{v}"), v.to_string()));
    prop_oneof![4 => plain, 2 => single, 2 => double, 1 => escaped]
}

fn sub() -> impl Strategy<Value = GenSub> {
    (
        prop::sample::select(HEADS.to_vec()),
        0..3usize,
        prop::collection::vec(word(), 0..4),
    )
        .prop_map(|(head, style, args)| {
            let rendered_head = match style {
                0 => head.to_string(),
                1 => format!("'{head}'"),
                _ => format!("/usr/bin/{head}"),
            };
            let mut raw = rendered_head;
            for (r, _) in &args {
                raw.push(' ');
                raw.push_str(r);
            }
            GenSub {
                raw,
                head: head.to_string(),
                args: args.into_iter().map(|(_, v)| v).collect(),
            }
        })
}

pub fn pipeline() -> impl Strategy<Value = GenPipeline> {
    (sub(), prop::collection::vec((0..3usize, any::<bool>(), sub()), 0..5)).prop_map(|(first, rest)| {
        let mut command = first.raw.clone();
        let mut subs = vec![first];
        for (op, spaced, s) in rest {
            let op = ["|", "&&", ";"][op];
            if spaced {
                command.push_str(&format!(" {op} "));
            } else {
                command.push_str(op);
            }
            command.push_str(&s.raw);
            subs.push(s);
        }
        GenPipeline { command, subs }
    })
}

pub fn whitelist_entries() -> impl Strategy<Value = Vec<String>> {
    (
        prop::sample::subsequence(HEADS.to_vec(), 0..=HEADS.len()),
        prop::sample::subsequence(COMPOUND.to_vec(), 0..=COMPOUND.len()),
    )
        .prop_map(|(a, b)| a.into_iter().chain(b).map(str::to_string).collect())
}

/// Brute-force oracle: a sub-command passes when some entry's words equal
/// its head followed by a prefix of its arguments.
pub fn oracle_unmatched(p: &GenPipeline, entries: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in &p.subs {
        let ok = entries.iter().any(|e| {
            let words: Vec<&str> = e.split(' ').collect();
            words[0] == s.head
                && words.len() - 1 <= s.args.len()
                && words[1..].iter().zip(&s.args).all(|(w, a)| w == a)
        });
        if !ok && !out.contains(&s.head) {
            out.push(s.head.clone());
        }
    }
    out
}

/// Shape of one generated assistant round: text only, or some tool calls.
#[derive(Debug, Clone)]
pub struct Round {
    pub calls: usize,
    pub thinking: bool,
    pub tokens: u64,
}

/// A structurally valid history: turns of a user prompt followed by rounds
/// of assistant calls and user results, each turn closed by a text answer.
/// Cumulative usage grows monotonically.
pub fn history() -> impl Strategy<Value = Vec<Message>> {
    let round = (0..4usize, any::<bool>(), 1..20_000u64).prop_map(|(calls, thinking, tokens)| Round {
        calls,
        thinking,
        tokens,
    });
    prop::collection::vec(prop::collection::vec(round, 1..5), 1..6).prop_map(build_history)
}

pub fn build_history(turns: Vec<Vec<Round>>) -> Vec<Message> {
    let mut out = Vec::new();
    let mut cum = 0u64;
    let mut next_id = 0;
    for (t, rounds) in turns.into_iter().enumerate() {
        out.push(Message::user_text(format!("prompt {t}")));
        let last = rounds.len() - 1;
        for (r, round) in rounds.into_iter().enumerate() {
            cum += round.tokens;
            let usage = Some(UsageMetadata {
                cumulative_input_tokens: cum,
                output_tokens: 10,
            });
            let mut blocks = Vec::new();
            if round.thinking {
                blocks.push(ContentBlock::thinking("hmm"));
            }
            let calls = if r == last { 0 } else { round.calls.max(1) };
            if calls == 0 {
                blocks.push(ContentBlock::text(format!("answer {t}.{r}")));
                out.push(Message::assistant(blocks, usage));
                continue;
            }
            let ids: Vec<String> = (0..calls)
                .map(|_| {
                    next_id += 1;
                    format!("c{next_id}")
                })
                .collect();
            for id in &ids {
                blocks.push(ContentBlock::tool_call(id, "read_file", json!({"path": "a"})));
            }
            out.push(Message::assistant(blocks, usage));
            out.push(Message::user(ids.iter().map(|id| ContentBlock::tool_result(id, "ok")).collect()));
        }
    }
    out
}

fn status() -> impl Strategy<Value = TurnStatus> {
    prop::sample::select(vec![TurnStatus::Completed, TurnStatus::Aborted, TurnStatus::Error])
}

/// Any of the ten event variants.
pub fn event_payload() -> impl Strategy<Value = EventPayload> {
    let s = || ".{0,12}";
    let stage = prop::sample::select(vec![
        StatsStage::Turn,
        StatsStage::PreCompression,
        StatsStage::Summarized,
        StatsStage::Truncated,
    ]);
    let layer = prop::sample::select(vec![
        PermissionLayer::L1,
        PermissionLayer::L2,
        PermissionLayer::L3,
        PermissionLayer::L4,
    ]);
    let task = prop::sample::select(vec![
        TaskStatus::Running,
        TaskStatus::Completed,
        TaskStatus::Failed,
        TaskStatus::Stopped,
    ]);
    let todo = (s(), s(), 0..3usize).prop_map(|(id, content, st)| {
        TodoItem::new(id, content, [TodoState::Pending, TodoState::Active, TodoState::Completed][st])
    });
    prop_oneof![
        s().prop_map(|text| EventPayload::TextChunk { text }),
        s().prop_map(|text| EventPayload::ThinkingChunk { text }),
        (s(), s(), s(), any::<i64>()).prop_map(|(call_id, tool_name, k, n)| EventPayload::ToolCallStarted {
            call_id,
            tool_name,
            args: json!({"path": k, "n": n, "nested": [true, null]}),
        }),
        (s(), s(), s(), any::<bool>(), any::<bool>()).prop_map(|(call_id, tool_name, content, is_error, r)| {
            EventPayload::ToolResult {
                call_id,
                tool_name,
                content,
                is_error,
                is_user_refusal: r,
            }
        }),
        (stage, any::<u64>(), any::<u64>(), any::<u64>(), any::<u64>()).prop_map(|(stage, c, o, e, l)| {
            EventPayload::TokenStats {
                stage,
                cumulative_input_tokens: c,
                output_tokens: o,
                effective_size: e,
                limit: l,
            }
        }),
        (s(), layer, s(), prop::option::of(s()), s(), s()).prop_map(|(request_id, layer, summary, risk_note, t, c)| {
            EventPayload::PermissionRequest {
                request_id,
                layer,
                summary,
                risk_note,
                tool_name: t,
                call_id: c,
            }
        }),
        (any::<bool>(), prop::collection::vec(todo, 0..4)).prop_map(|(subset, todos)| EventPayload::TodoUpdate {
            update_kind: if subset { UpdateKind::Subset } else { UpdateKind::Replace },
            todos,
        }),
        (s(), s(), task, prop::option::of(any::<i32>())).prop_map(|(task_id, command, status, exit_code)| {
            EventPayload::BackgroundNotification {
                task_id,
                command,
                status,
                exit_code,
            }
        }),
        status().prop_map(|status| EventPayload::SessionComplete { status }),
        (s(), s()).prop_map(|(code, message)| EventPayload::Error { code, message }),
    ]
}

/// Todo lists as (id, phrasing, state) triples.
pub fn todo_list(max: usize) -> impl Strategy<Value = Vec<(usize, usize, usize)>> {
    prop::collection::vec((0..6usize, 0..4usize, 0..3usize), 0..max)
}

pub fn materialize(spec: &[(usize, usize, usize)], round: usize) -> Vec<TodoItem> {
    spec.iter()
        .map(|&(id, text, st)| {
            TodoItem::new(
                format!("t{id}"),
                format!("task {id} phrased #{text} in round {round}"),
                [TodoState::Pending, TodoState::Active, TodoState::Completed][st],
            )
        })
        .collect()
}

/// Oracle for one update, written from the rules rather than the code path.
pub fn expected_update(current: &[TodoItem], incoming: &[TodoItem]) -> Result<(Vec<TodoItem>, UpdateKind), &'static str> {
    let valid = |l: &[TodoItem]| {
        let ids: std::collections::BTreeSet<_> = l.iter().map(|i| &i.id).collect();
        if ids.len() != l.len() {
            Err("unique-id")
        } else if l.iter().filter(|i| i.state == TodoState::Active).count() > 1 {
            Err("mutual-exclusion")
        } else {
            Ok(())
        }
    };
    valid(incoming)?;
    if incoming.iter().any(|i| !current.iter().any(|c| c.id == i.id)) {
        return Ok((incoming.to_vec(), UpdateKind::Replace));
    }
    let merged: Vec<TodoItem> = current
        .iter()
        .map(|c| {
            let state = incoming.iter().find(|i| i.id == c.id).map_or(c.state, |i| i.state);
            TodoItem::new(c.id.clone(), c.content.clone(), state)
        })
        .collect();
    valid(&merged)?;
    Ok((merged, UpdateKind::Subset))
}
