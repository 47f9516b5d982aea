//! Per-session inbound queue with semantic batching.
//!
//! While the main agent is busy, new input waits here. When it goes idle,
//! [`SessionQueue::dequeue_batch`] takes either the leading run of text
//! items (merged into one prompt) or exactly one command. Batching stops at
//! the first command so commands keep their position relative to text.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InboundKind {
    Text,
    Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboundItem {
    pub kind: InboundKind,
    pub content: String,
    pub enqueue_seq: u64,
}

impl InboundItem {
    pub fn classify(content: &str) -> InboundKind {
        if content.starts_with('/') {
            InboundKind::Command
        } else {
            InboundKind::Text
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Batch {
    Prompt(String),
    Command(String),
}

impl Batch {
    pub fn content(&self) -> &str {
        match self {
            Batch::Prompt(s) | Batch::Command(s) => s,
        }
    }

    pub fn from_single(content: String) -> Self {
        match InboundItem::classify(&content) {
            InboundKind::Text => Batch::Prompt(content),
            InboundKind::Command => Batch::Command(content),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionQueue {
    items: VecDeque<InboundItem>,
    next_seq: u64,
}

impl SessionQueue {
    pub fn push(&mut self, content: impl Into<String>) -> u64 {
        let content = content.into();
        let seq = self.next_seq;
        self.next_seq += 1;
        self.items.push_back(InboundItem {
            kind: InboundItem::classify(&content),
            content,
            enqueue_seq: seq,
        });
        seq
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = &InboundItem> {
        self.items.iter()
    }

    /// Removes the next batch and the number of items it consumed.
    pub fn dequeue_batch(&mut self) -> Option<(Batch, usize)> {
        let head = self.items.front()?;
        if head.kind == InboundKind::Command {
            let item = self.items.pop_front().expect("head exists");
            return Some((Batch::Command(item.content), 1));
        }
        let mut parts = Vec::new();
        while let Some(item) = self.items.front() {
            if item.kind == InboundKind::Command {
                break;
            }
            parts.push(self.items.pop_front().expect("front exists").content);
        }
        let n = parts.len();
        Some((Batch::Prompt(parts.join("\n")), n))
    }

    /// Drops every queued item, returning how many were dropped.
    pub fn purge(&mut self) -> usize {
        let n = self.items.len();
        self.items.clear();
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batching_stops_at_commands() {
        let mut q = SessionQueue::default();
        for s in ["A", "B", "/c", "D"] {
            q.push(s);
        }
        assert_eq!(q.dequeue_batch(), Some((Batch::Prompt("A\nB".into()), 2)));
        assert_eq!(q.dequeue_batch(), Some((Batch::Command("/c".into()), 1)));
        assert_eq!(q.dequeue_batch(), Some((Batch::Prompt("D".into()), 1)));
        assert_eq!(q.dequeue_batch(), None);
    }

    #[test]
    fn lone_command() {
        let mut q = SessionQueue::default();
        q.push("/status");
        assert_eq!(q.dequeue_batch(), Some((Batch::Command("/status".into()), 1)));
    }

    #[test]
    fn consecutive_commands_stay_separate() {
        let mut q = SessionQueue::default();
        q.push("/a");
        q.push("/b");
        assert_eq!(q.dequeue_batch().unwrap().0, Batch::Command("/a".into()));
        assert_eq!(q.dequeue_batch().unwrap().0, Batch::Command("/b".into()));
    }

    #[test]
    fn sequence_numbers_are_monotone() {
        let mut q = SessionQueue::default();
        let a = q.push("x");
        let b = q.push("/y");
        assert!(b > a);
        let kinds: Vec<InboundKind> = q.items().map(|i| i.kind).collect();
        assert_eq!(kinds, [InboundKind::Text, InboundKind::Command]);
        assert_eq!(q.purge(), 2);
        assert!(q.is_empty());
    }
}
