//! Shell pipeline splitting and whitelist evaluation.
//!
//! The scanner understands single quotes, double quotes and backslash
//! escapes. Composition operators (`|`, `||`, `&&`, `&`, `;`, newline) split
//! sub-commands only when they appear unquoted. Everything else about shell
//! grammar is out of scope: a command is allowed when the head of every
//! sub-command matches a whitelist entry.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScanError {
    #[error("unbalanced {0} quote")]
    UnbalancedQuote(char),
    #[error("trailing backslash")]
    TrailingEscape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Pipe,
    Or,
    And,
    Background,
    Sequence,
}

/// One simple command of a pipeline, with quotes removed from its words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubCommand {
    pub words: Vec<String>,
    /// Operator that joined this sub-command to the previous one.
    pub joined_by: Option<Operator>,
}

impl SubCommand {
    pub fn head(&self) -> Option<&str> {
        self.words.first().map(|w| basename(w))
    }
}

fn basename(word: &str) -> &str {
    word.rsplit('/').next().unwrap_or(word)
}

#[derive(Default)]
struct Builder {
    subs: Vec<SubCommand>,
    words: Vec<String>,
    word: String,
    in_word: bool,
    pending_op: Option<Operator>,
}

impl Builder {
    fn end_word(&mut self) {
        if self.in_word {
            self.words.push(std::mem::take(&mut self.word));
            self.in_word = false;
        }
    }

    fn end_sub(&mut self, next: Option<Operator>) {
        self.end_word();
        if !self.words.is_empty() {
            self.subs.push(SubCommand {
                words: std::mem::take(&mut self.words),
                joined_by: self.pending_op,
            });
        }
        // An operator following an empty segment still joins what comes next.
        if next.is_some() {
            self.pending_op = next;
        }
    }

    fn push(&mut self, c: char) {
        self.word.push(c);
        self.in_word = true;
    }
}

/// Splits `command` into sub-commands on unquoted composition operators.
///
/// Empty segments (`ls;`, `a;;b`) are dropped.
pub fn split_pipeline(command: &str) -> Result<Vec<SubCommand>, ScanError> {
    let mut b = Builder::default();
    let mut chars = command.chars().peekable();

    while let Some(c) = chars.next() {
        match c {
            '\'' => {
                b.in_word = true;
                loop {
                    match chars.next() {
                        Some('\'') => break,
                        Some(ch) => b.word.push(ch),
                        None => return Err(ScanError::UnbalancedQuote('\'')),
                    }
                }
            }
            '"' => {
                b.in_word = true;
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some(ch @ ('"' | '\\' | '$' | '`')) => b.word.push(ch),
                            Some('\n') => {}
                            Some(ch) => {
                                b.word.push('\\');
                                b.word.push(ch);
                            }
                            None => return Err(ScanError::UnbalancedQuote('"')),
                        },
                        Some(ch) => b.word.push(ch),
                        None => return Err(ScanError::UnbalancedQuote('"')),
                    }
                }
            }
            '\\' => match chars.next() {
                Some('\n') => {}
                Some(ch) => b.push(ch),
                None => return Err(ScanError::TrailingEscape),
            },
            '|' => {
                let op = if chars.peek() == Some(&'|') {
                    chars.next();
                    Operator::Or
                } else {
                    Operator::Pipe
                };
                b.end_sub(Some(op));
            }
            '&' => {
                let op = if chars.peek() == Some(&'&') {
                    chars.next();
                    Operator::And
                } else {
                    Operator::Background
                };
                b.end_sub(Some(op));
            }
            ';' | '\n' => b.end_sub(Some(Operator::Sequence)),
            c if c.is_whitespace() => b.end_word(),
            c => b.push(c),
        }
    }
    b.end_sub(None);
    Ok(b.subs)
}

/// Set of approved command prefixes.
///
/// An entry is one or more words. `git` approves every git invocation;
/// `git status` approves only that sub-command. The first word is compared
/// against the basename of the command's head.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Whitelist {
    entries: BTreeSet<String>,
}

impl Whitelist {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut w = Self::default();
        for e in entries {
            w.insert(e);
        }
        w
    }

    /// Adds an entry, normalizing internal whitespace. Returns false for
    /// blank entries and duplicates.
    pub fn insert(&mut self, entry: impl Into<String>) -> bool {
        let normalized = entry.into().split_whitespace().collect::<Vec<_>>().join(" ");
        if normalized.is_empty() {
            return false;
        }
        self.entries.insert(normalized)
    }

    pub fn contains(&self, entry: &str) -> bool {
        self.entries.contains(entry)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: &Whitelist) {
        self.entries.extend(other.entries.iter().cloned());
    }

    /// Longest entry that prefixes `sub`, if any.
    pub fn match_sub(&self, sub: &SubCommand) -> Option<&str> {
        let head = sub.head()?;
        self.entries
            .iter()
            .filter(|entry| {
                let mut parts = entry.split(' ');
                if parts.next() != Some(head) {
                    return false;
                }
                parts
                    .enumerate()
                    .all(|(i, p)| sub.words.get(i + 1).map(String::as_str) == Some(p))
            })
            .max_by_key(|entry| entry.split(' ').count())
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BashVerdict {
    Allow,
    Request {
        /// Heads of the sub-commands that matched no entry.
        unmatched: Vec<String>,
        risk_note: Option<String>,
    },
}

impl BashVerdict {
    pub fn is_allow(&self) -> bool {
        matches!(self, BashVerdict::Allow)
    }
}

pub fn evaluate_bash(command: &str, whitelist: &Whitelist) -> BashVerdict {
    let subs = match split_pipeline(command) {
        Ok(subs) => subs,
        Err(e) => {
            return BashVerdict::Request {
                unmatched: Vec::new(),
                risk_note: Some(format!("command could not be parsed: {e}")),
            }
        }
    };
    if subs.is_empty() {
        return BashVerdict::Request {
            unmatched: Vec::new(),
            risk_note: Some("empty command".into()),
        };
    }

    let mut unmatched: Vec<String> = Vec::new();
    for sub in &subs {
        if whitelist.match_sub(sub).is_none() {
            let head = sub.head().unwrap_or_default().to_string();
            if !unmatched.contains(&head) {
                unmatched.push(head);
            }
        }
    }
    if unmatched.is_empty() {
        BashVerdict::Allow
    } else {
        BashVerdict::Request {
            unmatched,
            risk_note: None,
        }
    }
}
