//! Headless terminal client.
//!
//! Each input line is sent as a query; the client then streams the turn's
//! events to the output until `session_complete`. A permission request
//! reads the next line as the answer: `a` (allow once), `p` (always allow),
//! `d` (deny) or `g <text>` (deny with guidance).

use std::path::PathBuf;

use anyhow::{bail, Context};
use futures::{SinkExt, StreamExt};
use semacore::event::{EngineEvent, EventPayload, TurnStatus};
use semacore::permissions::{Resolution, ResolutionKind};
use semacore::state::MAIN_AGENT;
use serde_json::Value;
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncWrite, AsyncWriteExt};
use tokio_tungstenite::tungstenite::Message;

use crate::protocol::{ClientFrame, ServerMessage, ServiceFrame};

#[derive(Debug, Clone, Default)]
pub struct ChatOptions {
    pub url: String,
    pub workspace: Option<PathBuf>,
    pub config: Option<Value>,
}

/// What happened during a chat run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChatSummary {
    pub token: String,
    pub session_id: String,
    pub statuses: Vec<TurnStatus>,
    pub approvals: Vec<ResolutionKind>,
}

pub fn parse_answer(line: &str) -> Option<Resolution> {
    let line = line.trim();
    match line {
        "a" => Some(Resolution::new(ResolutionKind::TransientAllow)),
        "p" => Some(Resolution::new(ResolutionKind::PersistentAllow)),
        "d" => Some(Resolution::new(ResolutionKind::Reject)),
        _ => {
            let text = line.strip_prefix("g ")?.trim();
            (!text.is_empty()).then(|| Resolution::guided(text))
        }
    }
}

/// Renders one event for the terminal. Streamed text is written as is;
/// everything else becomes its own line.
pub fn render(event: &EngineEvent) -> Option<String> {
    let prefix = if event.agent_id == MAIN_AGENT {
        String::new()
    } else {
        format!("[{}] ", event.agent_id)
    };
    let line = match &event.payload {
        EventPayload::TextChunk { text } => return Some(format!("{prefix}{text}")),
        EventPayload::ThinkingChunk { .. } | EventPayload::TokenStats { .. } => return None,
        EventPayload::ToolCallStarted { tool_name, args, .. } => format!("-> {tool_name} {args}"),
        EventPayload::ToolResult {
            tool_name,
            content,
            is_error,
            is_user_refusal,
            ..
        } => {
            let tag = if *is_user_refusal {
                "refused"
            } else if *is_error {
                "error"
            } else {
                "ok"
            };
            let first = content.lines().next().unwrap_or("");
            let more = if content.lines().nth(1).is_some() { " ..." } else { "" };
            format!("<- {tool_name} [{tag}] {first}{more}")
        }
        EventPayload::PermissionRequest {
            layer,
            summary,
            risk_note,
            ..
        } => {
            let note = risk_note.as_deref().map(|n| format!(" (risk: {n})")).unwrap_or_default();
            format!("[permission {layer:?}] {summary}{note}")
        }
        EventPayload::TodoUpdate { todos, .. } => {
            let items: Vec<String> = todos
                .iter()
                .map(|t| format!("{}:{}={:?}", t.id, t.content, t.state).to_lowercase())
                .collect();
            format!("[todos] {}", items.join(", "))
        }
        EventPayload::BackgroundNotification {
            task_id,
            command,
            status,
            exit_code,
        } => {
            let code = exit_code.map(|c| format!(" exit {c}")).unwrap_or_default();
            format!("[background {task_id}] {status:?}{code}: {command}").to_lowercase()
        }
        EventPayload::SessionComplete { status } => format!("[done: {}]", format!("{status:?}").to_lowercase()),
        EventPayload::Error { code, message } => format!("[error {code}] {message}"),
    };
    Some(format!("\n{prefix}{line}\n"))
}

const ANSWER_PROMPT: &str = "answer [a]llow once, [p] always, [d]eny, g <guidance>: ";

/// Runs an interactive session until `input` is exhausted.
pub async fn run_chat<R, W>(opts: ChatOptions, input: R, mut output: W) -> anyhow::Result<ChatSummary>
where
    R: AsyncBufRead + Unpin,
    W: AsyncWrite + Unpin,
{
    let (ws, _) = tokio_tungstenite::connect_async(opts.url.as_str())
        .await
        .with_context(|| format!("connecting to {}", opts.url))?;
    let (mut tx, mut rx) = ws.split();
    let send = |frame: &ClientFrame| Message::Text(serde_json::to_string(frame).expect("client frames serialize"));

    tx.send(send(&ClientFrame::Hello {
        workspace: opts.workspace.clone(),
        config: opts.config.clone(),
        token: None,
    }))
    .await?;

    let mut summary = ChatSummary::default();
    match next_message(&mut rx).await? {
        ServerMessage::Service(ServiceFrame::Welcome { token, session_id, .. }) => {
            summary.token = token;
            summary.session_id = session_id;
        }
        ServerMessage::Service(ServiceFrame::ProtocolError { code, message }) => bail!("{code}: {message}"),
        other => bail!("unexpected first frame: {other:?}"),
    }
    output
        .write_all(format!("connected: session {}\n", summary.session_id).as_bytes())
        .await?;
    output.flush().await?;

    let mut lines = input.lines();
    while let Some(line) = lines.next_line().await? {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        tx.send(send(&ClientFrame::Input {
            token: summary.token.clone(),
            content: line.to_string(),
        }))
        .await?;

        loop {
            let event = match next_message(&mut rx).await? {
                ServerMessage::Service(ServiceFrame::ProtocolError { code, message }) => {
                    output
                        .write_all(format!("[protocol error {code}] {message}\n").as_bytes())
                        .await?;
                    break;
                }
                ServerMessage::Service(_) => continue,
                ServerMessage::Event(e) => e,
            };
            if let Some(text) = render(&event) {
                output.write_all(text.as_bytes()).await?;
                output.flush().await?;
            }
            match event.payload {
                EventPayload::PermissionRequest { request_id, .. } => {
                    let resolution = loop {
                        output.write_all(ANSWER_PROMPT.as_bytes()).await?;
                        output.flush().await?;
                        match lines.next_line().await? {
                            // Input ran out mid-approval: deny rather than hang.
                            None => break Resolution::new(ResolutionKind::Reject),
                            Some(answer) => {
                                if let Some(r) = parse_answer(&answer) {
                                    break r;
                                }
                            }
                        }
                    };
                    output.write_all(b"\n").await?;
                    summary.approvals.push(resolution.kind);
                    tx.send(send(&ClientFrame::resolution(&summary.token, &request_id, resolution)))
                        .await?;
                }
                EventPayload::SessionComplete { status } if event.agent_id == MAIN_AGENT => {
                    summary.statuses.push(status);
                    break;
                }
                _ => {}
            }
        }
    }
    let _ = tx.close().await;
    output.flush().await?;
    Ok(summary)
}

async fn next_message<S>(rx: &mut S) -> anyhow::Result<ServerMessage>
where
    S: StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        match rx.next().await {
            Some(Ok(Message::Text(t))) => return ServerMessage::parse(&t).context("decoding server frame"),
            Some(Ok(Message::Close(_))) | None => bail!("server closed the connection"),
            Some(Ok(_)) => continue,
            Some(Err(e)) => return Err(e.into()),
        }
    }
}
