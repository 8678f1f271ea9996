//! Try-on sessions over HTTP: create a person, stack and reorder garments, tweak, render.

pub mod api;
pub mod config;
pub mod engine;
pub mod error;
pub mod manager;
pub mod session;
pub mod store;

use std::sync::Arc;

pub use api::router;
pub use config::ServiceConfig;
pub use engine::Engine;
pub use error::{ApiError, ApiResult, ErrorBody};
pub use manager::SessionManager;
pub use store::{FsStore, SessionStore};

/// Builds the router for `config`: loads the model and opens the session directory.
pub fn build_app(config: &ServiceConfig) -> ApiResult<axum::Router> {
    let engine = Arc::new(Engine::load(config.model_path.as_deref()));
    let store = Arc::new(FsStore::new(&config.session_dir)?);
    Ok(router(Arc::new(SessionManager::new(engine, store))))
}

/// Serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let app = build_app(&config).map_err(|e| std::io::Error::other(e.to_string()))?;
    serve_router(app, config.port).await
}

/// Serves `app` on every interface at `port` until the process is stopped.
pub async fn serve_router(app: axum::Router, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}
