//! HTTP service and command-line front end for the course recommender.

pub mod app;
pub mod cli;
pub mod config;

use std::time::Duration;

use anyhow::Context;
use log::info;

pub use app::{router, AppState};
pub use config::ServiceConfig;

/// Binds the listener, then loads the pipeline in the background; until it
/// is ready the API answers 503. Returns when the server stops or loading
/// fails.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let state = AppState::loading();
    let app = router(state.clone(), &config.cors_allowed_origins)?;
    let listener = tokio::net::TcpListener::bind(&config.listen_address)
        .await
        .with_context(|| format!("binding {}", config.listen_address))?;
    let addr = listener.local_addr()?;
    println!("listening on http://{addr}");

    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    });

    let ttl = Duration::from_secs(config.session_ttl_secs);
    let loader = state.clone();
    tokio::task::spawn_blocking(move || -> anyhow::Result<()> {
        let recommender = config.build_recommender()?;
        info!(
            "loaded {} courses, index dim {}",
            recommender.catalog().len(),
            recommender.index().dim()
        );
        loader.install(recommender, ttl);
        Ok(())
    })
    .await
    .context("loader panicked")??;

    server.await.context("server task failed")?.context("server error")
}
