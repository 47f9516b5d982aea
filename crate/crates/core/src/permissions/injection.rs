//! Injection screening for shell commands that missed the whitelist.
//!
//! The default classifier is a fixed rule set. Substitutions that run a
//! nested command (backticks, `$(`, `<(`/`>(`) outside single quotes raise a
//! warning that is shown with the approval prompt. Destructive commands
//! chained behind another command, and fork bombs, are blocked outright.

use std::fmt;

use async_trait::async_trait;
use futures::StreamExt;
use regex::Regex;
use serde::Deserialize;
use std::sync::{Arc, OnceLock};

use super::bash::{split_pipeline, SubCommand};
use crate::adapters::{Emission, ModelAdapter, ModelRequest, RequestPurpose};
use crate::model::Message;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    BacktickSubstitution,
    CommandSubstitution,
    ProcessSubstitution,
    ChainedDestructive(String),
    ForkBomb,
    /// Reason reported by a pluggable classifier.
    Other(String),
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::BacktickSubstitution => f.write_str("backtick-substitution"),
            Finding::CommandSubstitution => f.write_str("command-substitution"),
            Finding::ProcessSubstitution => f.write_str("process-substitution"),
            Finding::ChainedDestructive(head) => write!(f, "chained-destructive ({head})"),
            Finding::ForkBomb => f.write_str("fork-bomb"),
            Finding::Other(reason) => f.write_str(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Screening {
    Clean,
    Warn(Vec<Finding>),
    Block(Vec<Finding>),
}

impl Screening {
    fn rank(&self) -> u8 {
        match self {
            Screening::Clean => 0,
            Screening::Warn(_) => 1,
            Screening::Block(_) => 2,
        }
    }

    pub fn findings(&self) -> &[Finding] {
        match self {
            Screening::Clean => &[],
            Screening::Warn(f) | Screening::Block(f) => f,
        }
    }

    /// Human-readable note for the approval prompt, if anything was found.
    pub fn note(&self) -> Option<String> {
        let findings = self.findings();
        if findings.is_empty() {
            return None;
        }
        let reasons: Vec<String> = findings.iter().map(ToString::to_string).collect();
        Some(format!("possible shell injection: {}", reasons.join(", ")))
    }

    /// The stricter of two screenings, with findings from both.
    pub fn merge(self, other: Screening) -> Screening {
        let rank = self.rank().max(other.rank());
        let mut findings = self.findings().to_vec();
        for f in other.findings() {
            if !findings.contains(f) {
                findings.push(f.clone());
            }
        }
        match rank {
            0 => Screening::Clean,
            1 => Screening::Warn(findings),
            _ => Screening::Block(findings),
        }
    }
}

/// Substitution markers found outside single quotes.
fn substitutions(command: &str) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |f: Finding| {
        if !out.contains(&f) {
            out.push(f);
        }
    };
    let chars: Vec<char> = command.chars().collect();
    let mut in_single = false;
    let mut in_double = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if in_single {
            if c == '\'' {
                in_single = false;
            }
            i += 1;
            continue;
        }
        match c {
            '\\' => {
                i += 2;
                continue;
            }
            '\'' if !in_double => in_single = true,
            '"' => in_double = !in_double,
            '`' => push(Finding::BacktickSubstitution),
            '$' if chars.get(i + 1) == Some(&'(') => push(Finding::CommandSubstitution),
            '<' | '>' if !in_double && chars.get(i + 1) == Some(&'(') => {
                push(Finding::ProcessSubstitution)
            }
            _ => {}
        }
        i += 1;
    }
    out
}

fn is_destructive(sub: &SubCommand) -> bool {
    let Some(head) = sub.head() else {
        return false;
    };
    let args = &sub.words[1..];
    match head {
        "rm" => {
            let mut recursive = false;
            let mut force = false;
            for a in args {
                if a == "--recursive" {
                    recursive = true;
                } else if a == "--force" {
                    force = true;
                } else if a.starts_with('-') && !a.starts_with("--") {
                    recursive |= a.contains('r') || a.contains('R');
                    force |= a.contains('f');
                }
            }
            recursive && force
        }
        "dd" => args.iter().any(|a| a.starts_with("of=")),
        "chmod" => {
            args.iter().any(|a| a == "-R" || a == "--recursive") && args.iter().any(|a| a == "777")
        }
        h => h == "mkfs" || h.starts_with("mkfs."),
    }
}

fn fork_bomb_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"([A-Za-z_:][A-Za-z0-9_:]*)\(\)\{").expect("valid regex"))
}

fn has_fork_bomb(command: &str) -> bool {
    let compact: String = command.chars().filter(|c| !c.is_whitespace()).collect();
    fork_bomb_re().captures_iter(&compact).any(|cap| {
        let name = &cap[1];
        let body_start = cap.get(0).map_or(0, |m| m.end());
        compact[body_start..].contains(&format!("{name}|{name}&"))
    })
}

/// Rule-based screening.
pub fn screen_injection(command: &str) -> Screening {
    let mut block = Vec::new();
    if has_fork_bomb(command) {
        block.push(Finding::ForkBomb);
    }
    if let Ok(subs) = split_pipeline(command) {
        for sub in subs.iter().filter(|s| s.joined_by.is_some()) {
            if is_destructive(sub) {
                let head = sub.head().unwrap_or_default().to_string();
                let f = Finding::ChainedDestructive(head);
                if !block.contains(&f) {
                    block.push(f);
                }
            }
        }
    }
    let warn = substitutions(command);
    if !block.is_empty() {
        block.extend(warn);
        Screening::Block(block)
    } else if !warn.is_empty() {
        Screening::Warn(warn)
    } else {
        Screening::Clean
    }
}

#[async_trait]
pub trait InjectionClassifier: Send + Sync {
    async fn screen(&self, command: &str) -> Screening;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleClassifier;

#[async_trait]
impl InjectionClassifier for RuleClassifier {
    async fn screen(&self, command: &str) -> Screening {
        screen_injection(command)
    }
}

const SCREEN_PROMPT: &str = "You review shell commands for injection risks. \
Reply with a single JSON object {\"verdict\": \"clean\" | \"warn\" | \"block\", \"reasons\": [string]} and nothing else.";

#[derive(Deserialize)]
struct ModelVerdict {
    verdict: String,
    #[serde(default)]
    reasons: Vec<String>,
}

/// Asks a model for a second opinion and keeps the stricter of its verdict
/// and the rule-based one. Falls back to the rules alone when the model
/// errors or answers with something unparseable.
pub struct ModelAssistedClassifier {
    adapter: Arc<dyn ModelAdapter>,
}

impl ModelAssistedClassifier {
    pub fn new(adapter: Arc<dyn ModelAdapter>) -> Self {
        Self { adapter }
    }

    async fn ask(&self, command: &str) -> Option<Screening> {
        let req = ModelRequest {
            system_prompt: SCREEN_PROMPT.to_string(),
            history: vec![Message::user_text(command)],
            tools: Vec::new(),
            max_tokens: 256,
            purpose: RequestPurpose::Screen,
        };
        let mut stream = self.adapter.stream_turn(req);
        let mut text = String::new();
        while let Some(emission) = stream.next().await {
            match emission {
                Emission::Text(t) => text.push_str(&t),
                Emission::Error(_) => return None,
                _ => {}
            }
        }
        let start = text.find('{')?;
        let end = text.rfind('}')?;
        let verdict: ModelVerdict = serde_json::from_str(text.get(start..=end)?).ok()?;
        let findings = verdict.reasons.into_iter().map(Finding::Other).collect();
        match verdict.verdict.as_str() {
            "clean" => Some(Screening::Clean),
            "warn" => Some(Screening::Warn(findings)),
            "block" => Some(Screening::Block(findings)),
            _ => None,
        }
    }
}

#[async_trait]
impl InjectionClassifier for ModelAssistedClassifier {
    async fn screen(&self, command: &str) -> Screening {
        let rules = screen_injection(command);
        match self.ask(command).await {
            Some(model) => rules.merge(model),
            None => rules,
        }
    }
}
