//! A supervised shell process with dual-written output.
//!
//! Output (stdout and stderr merged) lands in a bounded in-memory tail and
//! in a pending buffer that is flushed to the log file on demand. Flushing
//! before reading the tail keeps the tail a suffix of the file.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::io::AsyncReadExt;
use tokio::process::Command;
use tokio::sync::watch;

/// Pending bytes beyond this are flushed by the reader itself.
const PENDING_FLUSH_BYTES: usize = 1 << 20;

pub struct OutputStore {
    tail: VecDeque<u8>,
    tail_cap: usize,
    pending: Vec<u8>,
    total: u64,
    path: PathBuf,
    file: Option<File>,
}

impl OutputStore {
    pub fn new(path: PathBuf, tail_cap: usize) -> Self {
        Self {
            tail: VecDeque::new(),
            tail_cap,
            pending: Vec::new(),
            total: 0,
            path,
            file: None,
        }
    }

    pub fn append(&mut self, bytes: &[u8]) {
        self.total += bytes.len() as u64;
        self.pending.extend_from_slice(bytes);
        let keep = bytes.len().min(self.tail_cap);
        self.tail.extend(&bytes[bytes.len() - keep..]);
        while self.tail.len() > self.tail_cap {
            self.tail.pop_front();
        }
    }

    pub fn flush(&mut self) -> io::Result<()> {
        if self.file.is_none() {
            if let Some(dir) = self.path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            self.file = Some(OpenOptions::new().create(true).append(true).open(&self.path)?);
        }
        if !self.pending.is_empty() {
            let file = self.file.as_mut().expect("opened above");
            file.write_all(&self.pending)?;
            file.flush()?;
            self.pending.clear();
        }
        Ok(())
    }

    /// Flushes, then moves the log file. The open descriptor keeps working.
    pub fn relocate(&mut self, to: PathBuf) -> io::Result<()> {
        self.flush()?;
        std::fs::rename(&self.path, &to)?;
        self.path = to;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn tail(&self) -> String {
        let (a, b) = self.tail.as_slices();
        let mut bytes = Vec::with_capacity(self.tail.len());
        bytes.extend_from_slice(a);
        bytes.extend_from_slice(b);
        String::from_utf8_lossy(&bytes).into_owned()
    }

    /// True when the tail holds every byte ever written.
    pub fn tail_is_complete(&self) -> bool {
        self.total as usize == self.tail.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExitInfo {
    pub code: Option<i32>,
    /// Terminated by a signal (including our own kill).
    pub signaled: bool,
}

/// A running (or finished) `sh -c` process in its own process group.
#[derive(Clone)]
pub struct Execution {
    store: Arc<Mutex<OutputStore>>,
    exit: watch::Receiver<Option<ExitInfo>>,
    pgid: i32,
}

impl Execution {
    pub fn start(command: &str, cwd: &Path, log_path: PathBuf, tail_cap: usize) -> io::Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(format!("exec 2>&1\n{command}"))
            .current_dir(cwd)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .process_group(0)
            .spawn()?;
        let pgid = child.id().map(|p| p as i32).unwrap_or(0);
        let mut stdout = child.stdout.take().expect("stdout piped");
        let store = Arc::new(Mutex::new(OutputStore::new(log_path, tail_cap)));
        let (tx, rx) = watch::channel(None);

        let reader_store = store.clone();
        let reader = tokio::spawn(async move {
            let mut buf = vec![0u8; 8192];
            loop {
                match stdout.read(&mut buf).await {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        let mut s = reader_store.lock().unwrap();
                        s.append(&buf[..n]);
                        if s.pending.len() > PENDING_FLUSH_BYTES {
                            let _ = s.flush();
                        }
                    }
                }
            }
        });

        tokio::spawn(async move {
            let status = child.wait().await;
            // Descendants that outlive the shell can hold the pipe open, so
            // draining is bounded.
            let abort = reader.abort_handle();
            if tokio::time::timeout(Duration::from_millis(500), reader).await.is_err() {
                abort.abort();
            }
            let info = match status {
                Ok(st) => {
                    use std::os::unix::process::ExitStatusExt;
                    ExitInfo {
                        code: st.code(),
                        signaled: st.signal().is_some(),
                    }
                }
                Err(_) => ExitInfo {
                    code: None,
                    signaled: false,
                },
            };
            let _ = tx.send(Some(info));
        });

        Ok(Self { store, exit: rx, pgid })
    }

    pub fn store(&self) -> &Arc<Mutex<OutputStore>> {
        &self.store
    }

    pub fn exit_info(&self) -> Option<ExitInfo> {
        *self.exit.borrow()
    }

    pub async fn wait(&self) -> ExitInfo {
        let mut rx = self.exit.clone();
        loop {
            if let Some(info) = *rx.borrow_and_update() {
                return info;
            }
            if rx.changed().await.is_err() {
                return ExitInfo {
                    code: None,
                    signaled: false,
                };
            }
        }
    }

    /// Sends SIGKILL to the whole process group.
    pub fn kill(&self) {
        if self.exit_info().is_none() && self.pgid > 0 {
            // SAFETY: killpg has no memory-safety preconditions.
            unsafe {
                libc::killpg(self.pgid, libc::SIGKILL);
            }
        }
    }

    /// Flushed output: tail, total byte count.
    pub fn snapshot(&self) -> (String, u64) {
        let mut s = self.store.lock().unwrap();
        let _ = s.flush();
        (s.tail(), s.total())
    }
}
