//! The `/v1/session` WebSocket endpoint.
//!
//! A connection starts with a `hello` frame, which either creates a fresh
//! engine instance under a new token or reattaches to an existing one.
//! After that, the reader routes client frames to the engine while a
//! forwarder copies engine events into the connection's outbound queue and
//! a writer drains it onto the socket.

use std::future::Future;
use std::path::Path;
use std::sync::Arc;

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use semacore::config::EngineConfig;
use semacore::permissions::{ApprovalError, Resolution, ResolveOutcome};
use semacore::{DispatchOutcome, Engine, SwitchOutcome};
use serde_json::Value;
use tokio::net::TcpListener;

use crate::config::{merge_json, ServiceConfig, ServiceSettings};
use crate::outbound::{Frame, OutboundQueue};
use crate::protocol::{AckStatus, ClientFrame, ServiceFrame};
use crate::registry::{OpenError, Registry};

/// WebSocket close code for protocol violations.
const POLICY_VIOLATION: u16 = 1008;

pub struct ServiceState {
    base: EngineConfig,
    settings: ServiceSettings,
    registry: Registry,
}

impl ServiceState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            registry: Registry::new(config.service.max_sessions),
            base: config.engine,
            settings: config.service,
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Engine behind `token`, for embedding and tests.
    pub fn engine(&self, token: &str) -> Option<Engine> {
        self.registry.get(token)
    }

    fn engine_config(&self, workspace: Option<&Path>, overrides: Option<&Value>) -> Result<EngineConfig, String> {
        let mut value = serde_json::to_value(&self.base).map_err(|e| e.to_string())?;
        if let Some(patch) = overrides {
            if !patch.is_object() {
                return Err("config overrides must be a JSON object".into());
            }
            merge_json(&mut value, patch);
        }
        let mut config: EngineConfig = serde_json::from_value(value).map_err(|e| format!("invalid config: {e}"))?;
        if let Some(ws) = workspace {
            config.workspace = self.base.workspace.join(ws);
        }
        Ok(config)
    }

    /// Handles a `hello` frame: returns the token, the engine and whether
    /// the session was resumed.
    fn establish(&self, frame: ClientFrame) -> Result<(String, Engine, bool), ServiceFrame> {
        let ClientFrame::Hello {
            workspace,
            config,
            token,
        } = frame
        else {
            return Err(ServiceFrame::error(
                "expected-hello",
                format!("first frame must be hello, got {}", frame.type_name()),
            ));
        };
        if let Some(token) = token {
            return match self.registry.get(&token) {
                Some(engine) => Ok((token, engine, true)),
                None => Err(ServiceFrame::error("bad-hello", "unknown session token")),
            };
        }
        let config = self
            .engine_config(workspace.as_deref(), config.as_ref())
            .map_err(|m| ServiceFrame::error("bad-hello", m))?;
        match self.registry.open(|| Engine::builder(config).build()) {
            Ok((token, engine)) => Ok((token, engine, false)),
            Err(OpenError::Capacity(n)) => Err(ServiceFrame::error(
                "capacity",
                format!("server is at capacity ({n} sessions)"),
            )),
            Err(OpenError::Build(e)) => Err(ServiceFrame::error("bad-hello", e.to_string())),
        }
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new().route("/v1/session", get(upgrade)).with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<ServiceState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<ServiceState>>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

fn parse_frame(text: &str) -> Result<ClientFrame, ServiceFrame> {
    serde_json::from_str(text).map_err(|e| ServiceFrame::error("bad-frame", e.to_string()))
}

async fn connection(socket: WebSocket, state: Arc<ServiceState>) {
    let (mut sink, mut stream) = socket.split();

    let first = loop {
        match stream.next().await {
            Some(Ok(Message::Text(t))) => break Ok(t),
            Some(Ok(Message::Binary(_))) => break Err(ServiceFrame::error("bad-frame", "binary frames are not supported")),
            Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
            Some(Ok(Message::Close(_)) | Err(_)) | None => return,
        }
    };
    let established = first.and_then(|t| parse_frame(&t)).and_then(|f| state.establish(f));
    let (token, engine, resumed) = match established {
        Ok(x) => x,
        Err(frame) => {
            tracing::info!(?frame, "rejecting connection");
            let reason = match &frame {
                ServiceFrame::ProtocolError { code, .. } => code.clone(),
                _ => String::new(),
            };
            let _ = sink.send(Message::Text(frame.to_json())).await;
            let _ = sink
                .send(Message::Close(Some(CloseFrame {
                    code: POLICY_VIOLATION,
                    reason: reason.into(),
                })))
                .await;
            return;
        }
    };
    tracing::info!(instance = engine.instance_id(), resumed, "session attached");

    let out = Arc::new(OutboundQueue::new(state.settings.outbound_capacity));
    let mut events = engine.subscribe();
    out.push(Frame::essential(
        ServiceFrame::Welcome {
            token: token.clone(),
            session_id: engine.session_id(),
            instance_id: engine.instance_id().to_string(),
            resumed,
        }
        .to_json(),
    ));

    let forward = {
        let out = out.clone();
        tokio::spawn(async move {
            while let Some(e) = events.recv().await {
                out.push(Frame::event(&e));
            }
        })
    };
    let writer = {
        let out = out.clone();
        tokio::spawn(async move {
            while let Some(f) = out.pop().await {
                if sink.send(Message::Text(f.text)).await.is_err() {
                    break;
                }
            }
            let _ = sink.close().await;
        })
    };

    while let Some(msg) = stream.next().await {
        let reply = match msg {
            Ok(Message::Text(t)) => handle_text(&engine, &token, &t),
            Ok(Message::Binary(_)) => ServiceFrame::error("bad-frame", "binary frames are not supported"),
            Ok(Message::Ping(_) | Message::Pong(_)) => continue,
            Ok(Message::Close(_)) | Err(_) => break,
        };
        out.push(Frame::essential(reply.to_json()));
    }

    forward.abort();
    out.close();
    let _ = writer.await;
    tracing::info!(instance = engine.instance_id(), dropped = out.dropped(), "connection closed");
}

/// Routes one client frame on an established connection and returns the
/// reply frame.
pub fn handle_text(engine: &Engine, token: &str, text: &str) -> ServiceFrame {
    let frame = match parse_frame(text) {
        Ok(f) => f,
        Err(e) => return e,
    };
    if let ClientFrame::Hello { .. } = frame {
        return ServiceFrame::error("already-established", "this connection already carries a session");
    }
    if frame.token() != Some(token) {
        return ServiceFrame::error("bad-token", "frame token does not match this connection's session");
    }
    let of = frame.type_name().to_string();
    let status = match frame {
        ClientFrame::Hello { .. } => unreachable!("handled above"),
        ClientFrame::Input { content, .. } => match engine.dispatch(content) {
            DispatchOutcome::Started => AckStatus::Started,
            DispatchOutcome::Enqueued => AckStatus::Enqueued,
        },
        ClientFrame::Resolution {
            request_id,
            kind,
            feedback,
            ..
        } => match engine.resolve(&request_id, Resolution { kind, feedback }) {
            Ok(ResolveOutcome::Delivered) => AckStatus::Resolved,
            Ok(ResolveOutcome::Duplicate) => AckStatus::Duplicate,
            Err(e @ ApprovalError::UnknownRequest(_)) => return ServiceFrame::error("unknown-request", e.to_string()),
        },
        ClientFrame::Abort { .. } => {
            if engine.abort() {
                AckStatus::Aborting
            } else {
                AckStatus::Idle
            }
        }
        ClientFrame::SwitchSession { session_id, .. } => {
            if session_id.trim().is_empty() {
                return ServiceFrame::error("bad-frame", "session_id must not be empty");
            }
            match engine.request_session_switch(session_id) {
                SwitchOutcome::Staged => AckStatus::Staged,
                SwitchOutcome::Applied => AckStatus::Applied,
            }
        }
    };
    ServiceFrame::Ack { of, status }
}
