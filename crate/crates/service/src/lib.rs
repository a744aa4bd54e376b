//! HTTP facade and command-line front end over `vadrank-core`.

pub mod api;
pub mod error;
pub mod state;

use std::net::SocketAddr;
use std::path::Path;

use anyhow::Context;

pub use api::router;
pub use error::ApiError;
pub use state::{AppState, Phase, Status};

/// Opens `dir`, resumes any interrupted run, and serves until ctrl-c.
pub async fn serve(dir: &Path, port: u16) -> anyhow::Result<()> {
    let state = AppState::open(dir).with_context(|| format!("refusing to serve {}", dir.display()))?;
    state.resume_pending()?;
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot bind {addr}"))?;
    eprintln!("serving {} on http://{addr}", dir.display());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
