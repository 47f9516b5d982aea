//! `semacore` command line: run the WebSocket service or chat with one.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use semacore_service::client::{run_chat, ChatOptions};
use semacore_service::{serve, ServiceConfig, ServiceState};
use tokio::io::BufReader;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "semacore", version, about = "Embeddable coding-agent engine service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve sessions over WebSocket at ws://<addr>/v1/session.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Interactive terminal client; reads queries and approvals from stdin.
    Chat {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `[service].url`.
        #[arg(long)]
        url: Option<String>,
        /// Workspace to request in the hello frame.
        #[arg(long)]
        workspace: Option<PathBuf>,
    },
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Serve { config } => {
            let config = ServiceConfig::from_path(&config)?;
            config.engine.validate()?;
            let addr = config.service.addr.clone();
            let listener = tokio::net::TcpListener::bind(&addr)
                .await
                .with_context(|| format!("binding {addr}"))?;
            tracing::info!("listening on ws://{}/v1/session", listener.local_addr()?);
            let shutdown = async {
                let _ = tokio::signal::ctrl_c().await;
            };
            serve(listener, ServiceState::new(config), shutdown).await?;
        }
        Command::Chat { config, url, workspace } => {
            let config = ServiceConfig::from_path(&config)?;
            let opts = ChatOptions {
                url: url.unwrap_or_else(|| config.service.chat_url()),
                workspace,
                config: None,
            };
            let summary = run_chat(opts, BufReader::new(tokio::io::stdin()), tokio::io::stdout()).await?;
            tracing::info!(turns = summary.statuses.len(), "chat finished");
        }
    }
    Ok(())
}
