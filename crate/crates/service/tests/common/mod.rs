//! Live-server harness for the service tests.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use futures::stream::{SplitSink, SplitStream};
use futures::{SinkExt, StreamExt};
use semacore::config::EngineConfig;
use semacore::event::{EngineEvent, EventPayload};
use semacore_service::protocol::{ServerMessage, ServiceFrame};
use semacore_service::{serve, ServiceConfig, ServiceSettings, ServiceState};
use serde_json::{json, Value};
use tempfile::TempDir;
use tokio::net::TcpStream;
use tokio::sync::oneshot;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub struct TestServer {
    pub url: String,
    pub state: Arc<ServiceState>,
    pub workspace: PathBuf,
    pub dir: TempDir,
    _shutdown: oneshot::Sender<()>,
}

impl TestServer {
    /// Writes `script` next to the workspace and returns its path, for use
    /// as a per-session `model.script` override.
    pub fn script(&self, name: &str, script: &Value) -> PathBuf {
        let path = self.dir.path().join(name);
        std::fs::write(&path, script.to_string()).unwrap();
        path
    }
}

pub async fn start(script: Value, tweak: impl FnOnce(&mut ServiceConfig)) -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    let workspace = dir.path().join("ws");
    std::fs::create_dir(&workspace).unwrap();
    let script_path = dir.path().join("script.json");
    std::fs::write(&script_path, script.to_string()).unwrap();
    let mut engine = EngineConfig {
        workspace: workspace.clone(),
        ..EngineConfig::default()
    };
    engine.model.script = Some(script_path);
    let mut config = ServiceConfig {
        engine,
        service: ServiceSettings::default(),
    };
    tweak(&mut config);

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("ws://{}/v1/session", listener.local_addr().unwrap());
    let state = ServiceState::new(config);
    let (tx, rx) = oneshot::channel::<()>();
    let s = state.clone();
    tokio::spawn(async move {
        serve(listener, s, async {
            let _ = rx.await;
        })
        .await
        .unwrap()
    });
    TestServer {
        url,
        state,
        workspace,
        dir,
        _shutdown: tx,
    }
}

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub struct Ws {
    tx: SplitSink<Socket, Message>,
    rx: SplitStream<Socket>,
}

impl Ws {
    pub async fn connect(url: &str) -> Ws {
        let (ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
        let (tx, rx) = ws.split();
        Ws { tx, rx }
    }

    pub async fn send(&mut self, frame: Value) {
        self.tx.send(Message::Text(frame.to_string())).await.unwrap();
    }

    pub async fn send_raw(&mut self, text: &str) {
        self.tx.send(Message::Text(text.to_string())).await.unwrap();
    }

    /// Next server message, or `None` once the server closed the socket.
    pub async fn recv_opt(&mut self) -> Option<ServerMessage> {
        loop {
            let msg = tokio::time::timeout(Duration::from_secs(10), self.rx.next())
                .await
                .expect("server answers in time");
            match msg {
                Some(Ok(Message::Text(t))) => return Some(ServerMessage::parse(&t).expect("well-formed frame")),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return None,
                Some(Ok(_)) => continue,
            }
        }
    }

    pub async fn recv(&mut self) -> ServerMessage {
        self.recv_opt().await.expect("socket open")
    }

    pub async fn recv_service(&mut self) -> ServiceFrame {
        loop {
            if let ServerMessage::Service(f) = self.recv().await {
                return f;
            }
        }
    }

    /// Collects messages up to and including the first one matching `stop`.
    pub async fn until(&mut self, stop: impl Fn(&ServerMessage) -> bool) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        loop {
            let m = self.recv().await;
            let done = stop(&m);
            out.push(m);
            if done {
                return out;
            }
        }
    }

    /// Collects everything up to and including the next `session_complete`.
    pub async fn until_complete(&mut self) -> Vec<ServerMessage> {
        self.until(|m| matches!(m, ServerMessage::Event(e) if e.is_session_complete()))
            .await
    }

    pub async fn until_permission(&mut self) -> (Vec<ServerMessage>, String) {
        let msgs = self
            .until(|m| {
                matches!(m, ServerMessage::Event(e) if matches!(e.payload, EventPayload::PermissionRequest { .. }))
            })
            .await;
        let id = permission_request(&msgs).unwrap();
        (msgs, id)
    }

    pub async fn close(mut self) {
        let _ = self.tx.close().await;
    }
}

/// Connects, says hello and returns the socket with its token.
pub async fn hello(url: &str, body: Value) -> (Ws, String) {
    let mut ws = Ws::connect(url).await;
    let mut frame = json!({"type": "hello"});
    merge(&mut frame, body);
    ws.send(frame).await;
    match ws.recv().await {
        ServerMessage::Service(ServiceFrame::Welcome { token, .. }) => (ws, token),
        other => panic!("expected welcome, got {other:?}"),
    }
}

fn merge(a: &mut Value, b: Value) {
    if let (Some(a), Value::Object(b)) = (a.as_object_mut(), b) {
        a.extend(b);
    }
}

pub fn events(msgs: &[ServerMessage]) -> Vec<&EngineEvent> {
    msgs.iter()
        .filter_map(|m| match m {
            ServerMessage::Event(e) => Some(e),
            _ => None,
        })
        .collect()
}

pub fn text(msgs: &[ServerMessage]) -> String {
    events(msgs)
        .iter()
        .filter_map(|e| match &e.payload {
            EventPayload::TextChunk { text } => Some(text.as_str()),
            _ => None,
        })
        .collect()
}

pub fn permission_request(msgs: &[ServerMessage]) -> Option<String> {
    events(msgs).iter().find_map(|e| match &e.payload {
        EventPayload::PermissionRequest { request_id, .. } => Some(request_id.clone()),
        _ => None,
    })
}
