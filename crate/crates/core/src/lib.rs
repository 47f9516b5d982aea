//! Embeddable agent engine: sessions, tool scheduling, context management,
//! permissions and background execution behind an event stream.

pub mod adapters;
pub mod background;
pub mod config;
pub mod context;
pub mod event;
pub mod model;
pub mod permissions;
pub mod queue;
pub mod runtime;
pub mod skills;
pub mod state;
pub mod tenancy;
pub mod todo;
pub mod tools;

pub use runtime::{DispatchOutcome, Engine, EngineBuilder, EngineError, SwitchOutcome};
