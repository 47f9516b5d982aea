//! Per-connection outbound buffer with lossy backpressure.
//!
//! When a consumer falls behind and the buffer is full, the oldest
//! non-essential frame (streamed text, thinking, token statistics) is
//! dropped to make room. Essential frames are never dropped; the buffer
//! grows past its capacity instead.

use std::collections::VecDeque;
use std::sync::Mutex;

use semacore::event::{serialize_event, EngineEvent, EventPayload};
use tokio::sync::Notify;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub text: String,
    pub droppable: bool,
}

impl Frame {
    pub fn essential(text: String) -> Self {
        Self { text, droppable: false }
    }

    pub fn event(event: &EngineEvent) -> Self {
        Self {
            text: serialize_event(event),
            droppable: is_droppable(&event.payload),
        }
    }
}

pub fn is_droppable(payload: &EventPayload) -> bool {
    matches!(
        payload,
        EventPayload::TextChunk { .. } | EventPayload::ThinkingChunk { .. } | EventPayload::TokenStats { .. }
    )
}

#[derive(Default)]
struct State {
    frames: VecDeque<Frame>,
    dropped: u64,
    closed: bool,
}

pub struct OutboundQueue {
    capacity: usize,
    state: Mutex<State>,
    notify: Notify,
}

impl OutboundQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            state: Mutex::default(),
            notify: Notify::new(),
        }
    }

    pub fn push(&self, frame: Frame) {
        let mut s = self.state.lock().unwrap();
        if s.closed {
            return;
        }
        if s.frames.len() >= self.capacity {
            if let Some(i) = s.frames.iter().position(|f| f.droppable) {
                s.frames.remove(i);
                s.dropped += 1;
            } else if frame.droppable {
                s.dropped += 1;
                return;
            }
        }
        s.frames.push_back(frame);
        drop(s);
        self.notify.notify_one();
    }

    /// Next frame in order; `None` once closed and drained.
    pub async fn pop(&self) -> Option<Frame> {
        loop {
            {
                let mut s = self.state.lock().unwrap();
                if let Some(f) = s.frames.pop_front() {
                    return Some(f);
                }
                if s.closed {
                    return None;
                }
            }
            self.notify.notified().await;
        }
    }

    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.notify.notify_one();
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.state.lock().unwrap().dropped
    }
}
