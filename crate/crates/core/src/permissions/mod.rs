//! Four-layer permission gate.
//!
//! | layer | operation          | scope   | fast path                        |
//! |-------|--------------------|---------|----------------------------------|
//! | L1    | file edits         | session | `edit_allowed` flag              |
//! | L2    | shell commands     | project | every sub-command head whitelisted |
//! | L3    | skill loading      | project | skill name authorized            |
//! | L4    | external tools     | project | tool name authorized             |
//!
//! [`decide`] is pure. Anything it cannot allow or deny becomes a
//! [`RequestDraft`], which the runtime turns into a `permission_request`
//! event and parks on the [`ApprovalBroker`] until a client resolves it.

pub mod bash;
pub mod injection;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;
use tokio_util::sync::CancellationToken;

pub use bash::{evaluate_bash, split_pipeline, BashVerdict, ScanError, SubCommand, Whitelist};
pub use injection::{
    screen_injection, Finding, InjectionClassifier, ModelAssistedClassifier, RuleClassifier, Screening,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PermissionLayer {
    L1,
    L2,
    L3,
    L4,
}

/// What a tool call is about to do, as far as permissions care.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operation {
    Edit { path: String },
    Bash { command: String },
    Skill { name: String },
    External { name: String },
}

impl Operation {
    pub fn layer(&self) -> PermissionLayer {
        match self {
            Operation::Edit { .. } => PermissionLayer::L1,
            Operation::Bash { .. } => PermissionLayer::L2,
            Operation::Skill { .. } => PermissionLayer::L3,
            Operation::External { .. } => PermissionLayer::L4,
        }
    }

    pub fn summary(&self) -> String {
        match self {
            Operation::Edit { path } => format!("edit {path}"),
            Operation::Bash { command } => format!("run shell command: {command}"),
            Operation::Skill { name } => format!("load skill {name}"),
            Operation::External { name } => format!("call external tool {name}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionPolicy {
    pub edit_allowed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectPolicy {
    #[serde(default)]
    pub bash_whitelist: Whitelist,
    #[serde(default)]
    pub authorized_skills: BTreeSet<String>,
    #[serde(default)]
    pub authorized_externals: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PermissionPolicy {
    pub session: SessionPolicy,
    pub project: ProjectPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestDraft {
    pub layer: PermissionLayer,
    pub summary: String,
    pub risk_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny { reason: String },
    Request(RequestDraft),
}

fn request(op: &Operation, risk_note: Option<String>) -> Decision {
    Decision::Request(RequestDraft {
        layer: op.layer(),
        summary: op.summary(),
        risk_note,
    })
}

/// Permission decision using the rule-based injection screen.
pub fn decide(op: &Operation, policy: &PermissionPolicy) -> Decision {
    match op {
        Operation::Edit { .. } => {
            if policy.session.edit_allowed {
                Decision::Allow
            } else {
                request(op, None)
            }
        }
        Operation::Bash { command } => match evaluate_bash(command, &policy.project.bash_whitelist) {
            BashVerdict::Allow => Decision::Allow,
            BashVerdict::Request { risk_note, .. } => {
                screen_to_decision(op, screen_injection(command), risk_note)
            }
        },
        Operation::Skill { name } => {
            if policy.project.authorized_skills.contains(name) {
                Decision::Allow
            } else {
                request(op, None)
            }
        }
        Operation::External { name } => {
            if policy.project.authorized_externals.contains(name) {
                Decision::Allow
            } else {
                request(op, None)
            }
        }
    }
}

/// Like [`decide`], but shell commands that miss the whitelist go through
/// `classifier` instead of the built-in rules.
pub async fn decide_with(
    op: &Operation,
    policy: &PermissionPolicy,
    classifier: &dyn InjectionClassifier,
) -> Decision {
    if let Operation::Bash { command } = op {
        if let BashVerdict::Request { risk_note, .. } =
            evaluate_bash(command, &policy.project.bash_whitelist)
        {
            let screening = classifier.screen(command).await;
            return screen_to_decision(op, screening, risk_note);
        }
    }
    decide(op, policy)
}

fn screen_to_decision(op: &Operation, screening: Screening, parse_note: Option<String>) -> Decision {
    match screening {
        Screening::Block(_) => Decision::Deny {
            reason: screening.note().unwrap_or_default(),
        },
        other => {
            let note = match (parse_note, other.note()) {
                (Some(a), Some(b)) => Some(format!("{a}; {b}")),
                (a, b) => a.or(b),
            };
            request(op, note)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionKind {
    TransientAllow,
    PersistentAllow,
    Reject,
    GuidedCorrection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub kind: ResolutionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

impl Resolution {
    pub fn new(kind: ResolutionKind) -> Self {
        Self { kind, feedback: None }
    }

    pub fn guided(feedback: impl Into<String>) -> Self {
        Self {
            kind: ResolutionKind::GuidedCorrection,
            feedback: Some(feedback.into()),
        }
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("cannot read policy file {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write policy file {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("malformed policy file {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    v: u32,
    #[serde(flatten)]
    policy: ProjectPolicy,
}

/// Project policy backed by `<workspace>/.sema/policy.json`.
///
/// Entries from the engine configuration form a fixed base that is merged
/// into every snapshot but never written back to the file.
#[derive(Debug)]
pub struct PolicyStore {
    path: PathBuf,
    base: Whitelist,
    persisted: Mutex<ProjectPolicy>,
}

impl PolicyStore {
    pub fn policy_path(workspace: &Path) -> PathBuf {
        workspace.join(".sema").join("policy.json")
    }

    pub fn open(workspace: &Path, base: Whitelist) -> Result<Self, PolicyError> {
        let path = Self::policy_path(workspace);
        let persisted = read_policy(&path)?;
        Ok(Self {
            path,
            base,
            persisted: Mutex::new(persisted),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Base whitelist merged with everything granted so far.
    pub fn project(&self) -> ProjectPolicy {
        let mut p = self.persisted.lock().unwrap().clone();
        p.bash_whitelist.extend(&self.base);
        p
    }

    /// Only the persisted part, as stored on disk.
    pub fn persisted(&self) -> ProjectPolicy {
        self.persisted.lock().unwrap().clone()
    }

    /// Records a persistent grant for `op` and saves the file. For shell
    /// commands every sub-command head the whitelist does not cover yet is
    /// added. Edits are session-scoped and are not stored here.
    pub fn grant(&self, op: &Operation) -> Result<(), PolicyError> {
        let merged = self.project();
        let mut persisted = self.persisted.lock().unwrap();
        let changed = match op {
            Operation::Edit { .. } => false,
            Operation::Bash { command } => match split_pipeline(command) {
                Ok(subs) => {
                    let mut changed = false;
                    for sub in &subs {
                        if merged.bash_whitelist.match_sub(sub).is_none() {
                            if let Some(head) = sub.head() {
                                changed |= persisted.bash_whitelist.insert(head);
                            }
                        }
                    }
                    changed
                }
                Err(_) => false,
            },
            Operation::Skill { name } => persisted.authorized_skills.insert(name.clone()),
            Operation::External { name } => persisted.authorized_externals.insert(name.clone()),
        };
        if changed {
            write_policy(&self.path, &persisted)?;
        }
        Ok(())
    }
}

pub fn read_policy(path: &Path) -> Result<ProjectPolicy, PolicyError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(ProjectPolicy::default()),
        Err(source) => {
            return Err(PolicyError::Read {
                path: path.to_owned(),
                source,
            })
        }
    };
    let file: PolicyFile = serde_json::from_str(&text).map_err(|e| PolicyError::Malformed {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    if file.v != 1 {
        return Err(PolicyError::Malformed {
            path: path.to_owned(),
            message: format!("unsupported version {}", file.v),
        });
    }
    Ok(file.policy)
}

pub fn write_policy(path: &Path, policy: &ProjectPolicy) -> Result<(), PolicyError> {
    let werr = |source| PolicyError::Write {
        path: path.to_owned(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(werr)?;
    }
    let file = PolicyFile {
        v: 1,
        policy: policy.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("policy serializes");
    text.push('\n');
    // Write-then-rename so a crash never leaves a truncated policy behind.
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(werr)?;
    std::fs::rename(&tmp, path).map_err(werr)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApprovalError {
    #[error("unknown permission request {0}")]
    UnknownRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolveOutcome {
    Delivered,
    /// The request was already settled; the resolution was ignored.
    Duplicate,
}

#[derive(Default)]
struct BrokerInner {
    next: u64,
    pending: HashMap<String, oneshot::Sender<Resolution>>,
    settled: HashSet<String>,
}

/// Parks suspended tool calls until their permission request is resolved.
#[derive(Default)]
pub struct ApprovalBroker {
    inner: Mutex<BrokerInner>,
}

pub struct PendingApproval {
    pub request_id: String,
    rx: oneshot::Receiver<Resolution>,
}

impl ApprovalBroker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&self) -> PendingApproval {
        let mut inner = self.inner.lock().unwrap();
        inner.next += 1;
        let request_id = format!("req-{}", inner.next);
        let (tx, rx) = oneshot::channel();
        inner.pending.insert(request_id.clone(), tx);
        PendingApproval { request_id, rx }
    }

    pub fn resolve(&self, request_id: &str, resolution: Resolution) -> Result<ResolveOutcome, ApprovalError> {
        let mut inner = self.inner.lock().unwrap();
        match inner.pending.remove(request_id) {
            Some(tx) => {
                inner.settled.insert(request_id.to_string());
                // The waiter may have given up on abort in the meantime;
                // the request counts as settled either way.
                let _ = tx.send(resolution);
                Ok(ResolveOutcome::Delivered)
            }
            None if inner.settled.contains(request_id) => Ok(ResolveOutcome::Duplicate),
            None => Err(ApprovalError::UnknownRequest(request_id.to_string())),
        }
    }

    pub fn is_pending(&self, request_id: &str) -> bool {
        self.inner.lock().unwrap().pending.contains_key(request_id)
    }

    pub fn pending_count(&self) -> usize {
        self.inner.lock().unwrap().pending.len()
    }

    fn settle(&self, request_id: &str) {
        let mut inner = self.inner.lock().unwrap();
        inner.pending.remove(request_id);
        inner.settled.insert(request_id.to_string());
    }

    /// Waits for the resolution of `pending`. Returns `None` when `abort`
    /// trips first; a resolution arriving later is then a duplicate.
    pub async fn wait(&self, pending: PendingApproval, abort: &CancellationToken) -> Option<Resolution> {
        let PendingApproval { request_id, rx } = pending;
        let out = tokio::select! {
            biased;
            _ = abort.cancelled() => None,
            r = rx => r.ok(),
        };
        if out.is_none() {
            self.settle(&request_id);
        }
        out
    }
}
