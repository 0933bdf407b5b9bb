//! HTTP service for flood-ensemble overlap analytics over a persistent surface store.

pub mod analytics;
pub mod api;
pub mod config;
pub mod state;
pub mod store;

pub use api::router;
pub use config::Config;
pub use state::AppState;

/// Serves until ctrl-c.
pub async fn serve(config: Config) -> anyhow::Result<()> {
    let bind = config.bind;
    let state = AppState::open(config).await?;
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
