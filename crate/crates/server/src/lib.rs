//! HTTP service for the sketch co-creation loop: sessions, strokes,
//! inspirations, generation scheduling, persistence and telemetry.

pub mod config;
pub mod error;
pub mod jobs;
pub mod routes;
pub mod state;
pub mod store;

use std::sync::Arc;

pub use config::ServiceConfig;
pub use routes::router;
pub use state::AppState;

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve(
    app: Arc<AppState>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app))
        .with_graceful_shutdown(shutdown)
        .await
}
