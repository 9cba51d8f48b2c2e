//! Versioned storage for workflows and the HTTP API in front of it.
//!
//! Whoever creates a workflow gets an edit token; updates need it, reads
//! do not. `/restore` serves the latest revision read-only.

mod api;
pub mod store;

pub use api::{router, AppState, IngestJob, ServiceConfig, BASE_REV_HEADER, TOKEN_HEADER};
pub use store::{Created, Revision, RevisionMeta, Store, StoreError};

/// Serves `router` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: std::sync::Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
