//! HTTP service for interactive prompting, under `/api/v1`.
//!
//! Volumes and models are registered once; each session owns one volume's
//! inference state. Refinement in a session is single-flight: a request
//! that finds the session busy gets `409`.

mod error;
pub mod render;
mod routes;
mod state;

use std::future::Future;
use std::time::{Duration, Instant};

pub use error::{ApiError, ApiResult, ErrorBody};
pub use routes::router;
pub use state::{AppState, ServiceConfig, SessionEntry, VolumeEntry, VolumeInfo};

/// Serves `state` on `listener` until `shutdown` resolves, evicting idle
/// sessions in the background.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    let period = (state.config().session_ttl / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
    let sweeper = {
        let state = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                state.sweep_expired(Instant::now());
            }
        })
    };
    let result = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    sweeper.abort();
    result
}
