//! Live session server for the csi-core engine.
//!
//! Each session runs on its own actor thread that owns the engine state and
//! appends to `<data_dir>/<session_id>/events.jsonl`. Participants connect
//! over a WebSocket carrying line-delimited JSON; facilitators use the HTTP
//! control API.

pub mod actor;
pub mod cli;
pub mod error;
pub mod http;
pub mod hub;
pub mod llm;
pub mod wire;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use actor::{Clock, ManualClock, SessionHandle, SessionStatus, SystemClock};
pub use error::ApiError;
pub use hub::{Hub, HubOptions};

/// The `serve` configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
}

fn default_bind() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

fn default_data_dir() -> PathBuf {
    "sessions".into()
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: default_bind(),
            port: default_port(),
            data_dir: default_data_dir(),
        }
    }
}

/// Binds and serves until the process is interrupted.
pub async fn serve(config: ServerConfig) -> std::io::Result<()> {
    let hub = Hub::new(HubOptions {
        data_dir: Some(config.data_dir.clone()),
        ..HubOptions::default()
    });
    let addr: SocketAddr = format!("{}:{}", config.bind, config.port)
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, data_dir = %config.data_dir.display(), "listening");
    axum::serve(listener, http::router(Arc::clone(&hub)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
