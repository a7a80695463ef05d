//! Interactive simulation sessions: the ballbot plant and controller run in
//! paced wall-clock time, stream telemetry over a WebSocket and take
//! teleoperation commands.
//!
//! [`engine::SessionEngine`] is the deterministic part and can be driven
//! directly; [`session`] paces it on a task and [`server`] exposes it over
//! HTTP. The wire format is in [`protocol`].

pub mod clock;
pub mod engine;
pub mod protocol;
pub mod server;
pub mod session;

use std::future::Future;
use std::sync::Arc;

use ballbot_core::config::ConfigError;
use ballbot_core::harness::HarnessError;
use thiserror::Error;
use tokio::net::TcpListener;

pub use engine::{replay, CommandLog, SessionEngine};
pub use protocol::{ClientMessage, ServerMessage, TelemetryFrame, PROTO_VERSION};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
    #[error("session task has stopped")]
    SessionClosed,
    #[error("replay: {0}")]
    Replay(String),
}

/// Binds `addr`; failure is reported as [`ServiceError::Bind`].
pub async fn bind(addr: &str) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind {
        addr: addr.to_string(),
        source,
    })
}

/// Serves sessions on `listener` until `shutdown` resolves.
pub async fn serve_on(
    listener: TcpListener,
    state: Arc<server::AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "serving");
    }
    axum::serve(listener, server::router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}

/// Binds and serves with `defaults` as the configuration document for new
/// sessions, until Ctrl-C.
pub async fn serve(defaults: String, addr: &str) -> Result<(), ServiceError> {
    let listener = bind(addr).await?;
    let state = server::AppState::new(defaults, Arc::new(clock::TokioClock::new()));
    serve_on(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
