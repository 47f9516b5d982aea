//! Background process supervision.
//!
//! Tasks enter the manager either proactively ([`BackgroundManager::spawn`])
//! or by takeover, when a foreground command outlives the timeout threshold
//! and is adopted instead of killed ([`BackgroundManager::run_foreground`]).
//! Each task has an observer that flushes output to
//! `<workspace>/.sema/bg/<task_id>.log` on an adaptive schedule and retires
//! the task when its process exits.

pub mod exec;

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio_util::sync::CancellationToken;

use crate::config::BackgroundConfig;
pub use exec::{Execution, ExitInfo, OutputStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Running,
    Completed,
    Failed,
    Stopped,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        self != TaskStatus::Running
    }

    fn from_exit(info: ExitInfo, stop_requested: bool) -> Self {
        if stop_requested || info.signaled {
            TaskStatus::Stopped
        } else if info.code == Some(0) {
            TaskStatus::Completed
        } else {
            TaskStatus::Failed
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Running => "running",
            TaskStatus::Completed => "completed",
            TaskStatus::Failed => "failed",
            TaskStatus::Stopped => "stopped",
        }
    }
}

#[derive(Debug, Error)]
pub enum BackgroundError {
    #[error("background capacity exceeded ({0} tasks running)")]
    CapacityExceeded(usize),
    #[error("failed to spawn process: {0}")]
    SpawnFailure(#[from] std::io::Error),
    #[error("unknown background task {0}")]
    UnknownId(String),
}

impl BackgroundError {
    pub fn code(&self) -> &'static str {
        match self {
            BackgroundError::CapacityExceeded(_) => "capacity-exceeded",
            BackgroundError::SpawnFailure(_) => "spawn-failure",
            BackgroundError::UnknownId(_) => "unknown-id",
        }
    }
}

/// Observer poll intervals: 100 ms, doubling, capped at 5 s.
#[derive(Debug, Clone)]
pub struct PollSchedule {
    next: Duration,
    cap: Duration,
}

impl Default for PollSchedule {
    fn default() -> Self {
        Self {
            next: Duration::from_millis(100),
            cap: Duration::from_secs(5),
        }
    }
}

impl Iterator for PollSchedule {
    type Item = Duration;

    fn next(&mut self) -> Option<Duration> {
        let current = self.next;
        self.next = (self.next * 2).min(self.cap);
        Some(current)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSnapshot {
    pub task_id: String,
    pub command: String,
    pub status: TaskStatus,
    pub exit_code: Option<i32>,
    pub tail: String,
    pub bytes_total: u64,
    pub log_path: PathBuf,
    pub started_at: SystemTime,
    pub ended_at: Option<SystemTime>,
}

/// Delivered once per task when it reaches a terminal state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskNotice {
    pub task_id: String,
    pub command: String,
    pub status: TaskStatus,
    pub exit_code: Option<i32>,
    pub tail: String,
}

/// Notice tails are cut to this many bytes before injection.
const NOTICE_TAIL_BYTES: usize = 2048;

impl TaskNotice {
    /// Block injected into the main agent's context.
    pub fn render(&self) -> String {
        let exit = self.exit_code.map_or("none".to_string(), |c| c.to_string());
        let mut tail = self.tail.as_str();
        if tail.len() > NOTICE_TAIL_BYTES {
            let mut start = tail.len() - NOTICE_TAIL_BYTES;
            while !tail.is_char_boundary(start) {
                start += 1;
            }
            tail = &tail[start..];
        }
        format!(
            "<background-task id=\"{}\" status=\"{}\" exit_code=\"{}\">\ncommand: {}\noutput tail:\n{}\n</background-task>",
            self.task_id,
            self.status.as_str(),
            exit,
            self.command,
            tail.trim_end()
        )
    }
}

pub type Notifier = Arc<dyn Fn(TaskNotice) + Send + Sync>;

struct TaskRecord {
    status: TaskStatus,
    exit_code: Option<i32>,
    ended_at: Option<SystemTime>,
    stop_requested: bool,
}

struct Task {
    id: String,
    command: String,
    exec: Execution,
    started_at: SystemTime,
    record: Mutex<TaskRecord>,
    retired: CancellationToken,
}

impl Task {
    fn snapshot(&self) -> TaskSnapshot {
        let (tail, bytes_total) = self.exec.snapshot();
        let log_path = self.exec.store().lock().unwrap().path().to_owned();
        let r = self.record.lock().unwrap();
        TaskSnapshot {
            task_id: self.id.clone(),
            command: self.command.clone(),
            status: r.status,
            exit_code: r.exit_code,
            tail,
            bytes_total,
            log_path,
            started_at: self.started_at,
            ended_at: r.ended_at,
        }
    }
}

#[derive(Default)]
struct Registry {
    next_id: u64,
    next_fg: u64,
    active: BTreeMap<u64, Arc<Task>>,
    retired: VecDeque<Arc<Task>>,
}

/// Result of a foreground shell command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForegroundOutcome {
    Finished {
        output: String,
        exit_code: Option<i32>,
        status: TaskStatus,
    },
    /// The command outlived the threshold and now runs as a background task.
    TakenOver { task_id: String, output_so_far: String },
    /// Abort tripped; the process group was killed.
    Cancelled { output: String },
}

pub struct BackgroundManager {
    config: BackgroundConfig,
    workspace: PathBuf,
    registry: Mutex<Registry>,
    notifier: Mutex<Option<Notifier>>,
    /// The foreground shell slot. Held for the duration of one foreground
    /// command; takeover releases it.
    shell: tokio::sync::Mutex<()>,
}

fn task_number(id: &str) -> Option<u64> {
    id.strip_prefix("bg-")?.parse().ok()
}

impl BackgroundManager {
    pub fn new(config: BackgroundConfig, workspace: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            config,
            workspace: workspace.into(),
            registry: Mutex::new(Registry::default()),
            notifier: Mutex::new(None),
            shell: tokio::sync::Mutex::new(()),
        })
    }

    pub fn config(&self) -> &BackgroundConfig {
        &self.config
    }

    pub fn log_dir(&self) -> PathBuf {
        self.workspace.join(".sema").join("bg")
    }

    pub fn set_notifier(&self, notifier: Notifier) {
        *self.notifier.lock().unwrap() = Some(notifier);
    }

    /// (active, retired) counts.
    pub fn counts(&self) -> (usize, usize) {
        let r = self.registry.lock().unwrap();
        (r.active.len(), r.retired.len())
    }

    pub fn spawn(self: &Arc<Self>, command: &str) -> Result<String, BackgroundError> {
        let mut reg = self.registry.lock().unwrap();
        if reg.active.len() >= self.config.max_concurrent {
            return Err(BackgroundError::CapacityExceeded(reg.active.len()));
        }
        reg.next_id += 1;
        let n = reg.next_id;
        let id = format!("bg-{n}");
        let log = self.log_dir().join(format!("{id}.log"));
        let exec = Execution::start(command, &self.workspace, log, self.config.memory_tail_bytes)?;
        self.register(&mut reg, n, id.clone(), command, exec);
        Ok(id)
    }

    fn register(self: &Arc<Self>, reg: &mut Registry, n: u64, id: String, command: &str, exec: Execution) {
        let task = Arc::new(Task {
            id,
            command: command.to_string(),
            exec,
            started_at: SystemTime::now(),
            record: Mutex::new(TaskRecord {
                status: TaskStatus::Running,
                exit_code: None,
                ended_at: None,
                stop_requested: false,
            }),
            retired: CancellationToken::new(),
        });
        reg.active.insert(n, task.clone());
        debug_assert!(reg.active.len() <= self.config.max_concurrent);
        tokio::spawn(self.clone().observe(n, task));
    }

    async fn observe(self: Arc<Self>, n: u64, task: Arc<Task>) {
        let mut schedule = PollSchedule::default();
        let info = loop {
            let interval = schedule.next().expect("infinite schedule");
            tokio::select! {
                info = task.exec.wait() => break info,
                _ = tokio::time::sleep(interval) => {
                    let _ = task.exec.store().lock().unwrap().flush();
                }
            }
        };
        let _ = task.exec.store().lock().unwrap().flush();

        let notice = {
            let mut r = task.record.lock().unwrap();
            r.status = TaskStatus::from_exit(info, r.stop_requested);
            r.exit_code = info.code;
            r.ended_at = Some(SystemTime::now());
            TaskNotice {
                task_id: task.id.clone(),
                command: task.command.clone(),
                status: r.status,
                exit_code: r.exit_code,
                tail: task.exec.store().lock().unwrap().tail(),
            }
        };
        {
            let mut reg = self.registry.lock().unwrap();
            if let Some(t) = reg.active.remove(&n) {
                reg.retired.push_back(t);
            }
            while reg.retired.len() > self.config.retention {
                reg.retired.pop_front();
            }
        }
        task.retired.cancel();
        let notifier = self.notifier.lock().unwrap().clone();
        if let Some(notify) = notifier {
            notify(notice);
        }
    }

    fn find(&self, task_id: &str) -> Result<Arc<Task>, BackgroundError> {
        let reg = self.registry.lock().unwrap();
        let unknown = || BackgroundError::UnknownId(task_id.to_string());
        let n = task_number(task_id).ok_or_else(unknown)?;
        if let Some(t) = reg.active.get(&n) {
            return Ok(t.clone());
        }
        reg.retired.iter().find(|t| t.id == task_id).cloned().ok_or_else(unknown)
    }

    pub fn poll_output(&self, task_id: &str) -> Result<TaskSnapshot, BackgroundError> {
        Ok(self.find(task_id)?.snapshot())
    }

    pub fn list(&self) -> Vec<TaskSnapshot> {
        let tasks: Vec<Arc<Task>> = {
            let reg = self.registry.lock().unwrap();
            reg.retired.iter().chain(reg.active.values()).cloned().collect()
        };
        tasks.iter().map(|t| t.snapshot()).collect()
    }

    /// Kills a running task and waits until it is retired. Terminal tasks
    /// are left as they are.
    pub async fn stop(&self, task_id: &str) -> Result<TaskSnapshot, BackgroundError> {
        let task = self.find(task_id)?;
        {
            let mut r = task.record.lock().unwrap();
            if r.status.is_terminal() {
                drop(r);
                return Ok(task.snapshot());
            }
            r.stop_requested = true;
        }
        task.exec.kill();
        task.retired.cancelled().await;
        Ok(task.snapshot())
    }

    /// Waits until the task is terminal and retired.
    pub async fn wait(&self, task_id: &str) -> Result<TaskSnapshot, BackgroundError> {
        let task = self.find(task_id)?;
        task.retired.cancelled().await;
        Ok(task.snapshot())
    }

    /// Runs a command in the foreground shell slot.
    ///
    /// If it is still running after the timeout threshold, the live process
    /// and its output store are adopted as a background task and the slot is
    /// released for the next command. At capacity the process is killed
    /// instead and the call fails.
    pub async fn run_foreground(
        self: &Arc<Self>,
        command: &str,
        cwd: &Path,
        abort: &CancellationToken,
    ) -> Result<ForegroundOutcome, BackgroundError> {
        let _slot = self.shell.lock().await;
        let log = {
            let mut reg = self.registry.lock().unwrap();
            reg.next_fg += 1;
            self.log_dir().join(format!("fg-{}.log", reg.next_fg))
        };
        let exec = Execution::start(command, cwd, log, self.config.memory_tail_bytes)?;
        let threshold = Duration::from_millis(self.config.timeout_threshold_ms);

        tokio::select! {
            biased;
            _ = abort.cancelled() => {
                exec.kill();
                exec.wait().await;
                let output = self.finish_foreground(&exec);
                Ok(ForegroundOutcome::Cancelled { output })
            }
            info = exec.wait() => {
                let output = self.finish_foreground(&exec);
                Ok(ForegroundOutcome::Finished {
                    output,
                    exit_code: info.code,
                    status: TaskStatus::from_exit(info, false),
                })
            }
            _ = tokio::time::sleep(threshold) => self.take_over(command, exec),
        }
    }

    fn finish_foreground(&self, exec: &Execution) -> String {
        let mut store = exec.store().lock().unwrap();
        let mut out = store.tail();
        if !store.tail_is_complete() {
            let _ = store.flush();
            out = format!(
                "[output truncated to the last {} of {} bytes; full log at {}]\n{out}",
                self.config.memory_tail_bytes,
                store.total(),
                store.path().display()
            );
        } else if store.path().exists() {
            let _ = std::fs::remove_file(store.path());
        }
        out
    }

    fn take_over(self: &Arc<Self>, command: &str, exec: Execution) -> Result<ForegroundOutcome, BackgroundError> {
        let mut reg = self.registry.lock().unwrap();
        if reg.active.len() >= self.config.max_concurrent {
            exec.kill();
            return Err(BackgroundError::CapacityExceeded(reg.active.len()));
        }
        reg.next_id += 1;
        let n = reg.next_id;
        let id = format!("bg-{n}");
        let output_so_far = {
            let mut store = exec.store().lock().unwrap();
            store.relocate(self.log_dir().join(format!("{id}.log")))?;
            store.tail()
        };
        self.register(&mut reg, n, id.clone(), command, exec);
        Ok(ForegroundOutcome::TakenOver {
            task_id: id,
            output_so_far,
        })
    }
}
