//! HTTP JSON API for live elicitation sessions, persisted as one event log
//! per session under a data directory.

mod api;
mod store;

pub use api::{router, ApiError, API_SCHEMA_VERSION};
pub use store::{AppState, DmMode, ServiceConfig};

/// Serve until interrupted.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let bind = config.bind.clone();
    let state = AppState::open(config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
