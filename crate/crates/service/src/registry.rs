//! Session tokens and the table of hosted engines.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::rngs::OsRng;
use rand::RngCore;
use semacore::Engine;
use thiserror::Error;

/// Fresh opaque token: 128 random bits from the OS, hex encoded.
pub fn new_token() -> String {
    let mut bytes = [0u8; 16];
    OsRng.fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Error)]
pub enum OpenError<E> {
    #[error("server is at capacity ({0} sessions)")]
    Capacity(usize),
    #[error(transparent)]
    Build(E),
}

/// Maps tokens to engines. Each token owns one engine instance.
pub struct Registry {
    max_sessions: usize,
    engines: Mutex<HashMap<String, Engine>>,
}

impl Registry {
    pub fn new(max_sessions: usize) -> Self {
        Self {
            max_sessions,
            engines: Mutex::default(),
        }
    }

    /// Builds an engine under a fresh token, unless the table is full.
    pub fn open<E>(&self, build: impl FnOnce() -> Result<Engine, E>) -> Result<(String, Engine), OpenError<E>> {
        let mut engines = self.engines.lock().unwrap();
        if engines.len() >= self.max_sessions {
            return Err(OpenError::Capacity(self.max_sessions));
        }
        let engine = build().map_err(OpenError::Build)?;
        let token = loop {
            let t = new_token();
            if !engines.contains_key(&t) {
                break t;
            }
        };
        engines.insert(token.clone(), engine.clone());
        Ok((token, engine))
    }

    pub fn get(&self, token: &str) -> Option<Engine> {
        self.engines.lock().unwrap().get(token).cloned()
    }

    pub fn len(&self) -> usize {
        self.engines.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
