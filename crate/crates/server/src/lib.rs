//! HTTP front end for the research pipeline.
//!
//! Projects live under one root directory (`<root>/<name>`). Runs execute on
//! the blocking pool; their events are kept per run and streamed over SSE
//! with replay, so a client that connects late (or reconnects with
//! `Last-Event-ID`) still sees every event.

mod api;
mod error;
mod runs;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use sciweave_core::llm::{AgentModels, Gateway};
use sciweave_core::pipeline::{mark_interrupted, RunOptions};
use sciweave_core::project::ProjectDir;
use thiserror::Error;
use tokio::net::TcpListener;

pub use api::router;
pub use error::ApiError;
pub use runs::{Envelope, Registry, Run, RunInfo, RunStatus};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    /// Directory holding one sub-directory per project.
    pub root: PathBuf,
    /// Largest accepted artifact upload, in bytes.
    pub max_upload: usize,
    /// When set, every route except health needs `Authorization: Bearer <token>`.
    pub token: Option<String>,
    /// How long shutdown waits for cancelled runs to wind down.
    pub drain_timeout: Duration,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8000)),
            root: PathBuf::from("projects"),
            max_upload: 32 * 1024 * 1024,
            token: None,
            drain_timeout: Duration::from_secs(10),
        }
    }
}

/// What every run is built from; per-request settings are layered on top.
#[derive(Clone)]
pub struct Engine {
    pub gateway: Arc<Gateway>,
    pub models: AgentModels,
    pub options: RunOptions,
}

impl Engine {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self {
            gateway,
            models: AgentModels::stock(),
            options: RunOptions::default(),
        }
    }

    pub fn with_models(mut self, models: AgentModels) -> Self {
        self.models = models;
        self
    }

    pub fn with_options(mut self, options: RunOptions) -> Self {
        self.options = options;
        self
    }
}

pub struct AppState {
    pub config: ServeConfig,
    pub engine: Engine,
    pub runs: Arc<Registry>,
}

/// A bound, not yet serving, listener. Binding separately lets callers learn
/// the port (and surface bind errors) before serving.
pub struct Server {
    listener: TcpListener,
    state: Arc<AppState>,
}

impl Server {
    pub async fn bind(config: ServeConfig, engine: Engine) -> Result<Self, ServerError> {
        std::fs::create_dir_all(&config.root)?;
        let listener = TcpListener::bind(config.addr)
            .await
            .map_err(|source| ServerError::Bind {
                addr: config.addr,
                source,
            })?;
        let state = Arc::new(AppState {
            config,
            engine,
            runs: Arc::new(Registry::default()),
        });
        Ok(Self { listener, state })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn state(&self) -> Arc<AppState> {
        self.state.clone()
    }

    /// Serves until `shutdown` resolves, then cancels active runs, waits up
    /// to the drain timeout and marks still-running stages interrupted.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServerError> {
        let state = self.state.clone();
        let app = router(state.clone());
        tracing::info!(addr = %self.listener.local_addr()?, root = %state.config.root.display(), "serving");
        let drain = {
            let state = state.clone();
            async move {
                shutdown.await;
                drain_runs(&state).await;
            }
        };
        axum::serve(self.listener, app)
            .with_graceful_shutdown(drain)
            .await?;
        Ok(())
    }
}

async fn drain_runs(state: &AppState) {
    let active = state.runs.active();
    if active.is_empty() {
        return;
    }
    tracing::info!(runs = active.len(), "shutdown: cancelling active runs");
    for run in &active {
        run.cancel.cancel();
    }
    if tokio::time::timeout(state.config.drain_timeout, state.runs.wait_idle())
        .await
        .is_err()
    {
        tracing::warn!("shutdown: runs did not stop within the drain timeout");
    }
    for run in &active {
        if let Ok(project) = ProjectDir::open(state.config.root.join(&run.project)) {
            if let Err(e) = mark_interrupted(&project) {
                tracing::warn!(project = %run.project, "could not mark interrupted: {e}");
            }
        }
        run.finish(RunStatus::Interrupted, Some("server shutting down".into()));
    }
}

/// Resolves on ctrl-c or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
