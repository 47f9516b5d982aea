//! WebSocket service layer for the semacore engine.
//!
//! Clients connect to `/v1/session`, send a `hello` frame and receive an
//! opaque session token. Every frame after that carries the token; the
//! server streams the session's engine events back unchanged. See
//! [`protocol`] for the frame catalogue and [`client`] for the headless
//! terminal client behind `semacore chat`.

pub mod client;
pub mod config;
pub mod outbound;
pub mod protocol;
pub mod registry;
pub mod server;

pub use config::{ServiceConfig, ServiceSettings};
pub use server::{router, serve, ServiceState};
