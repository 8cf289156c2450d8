//! Live clustering sessions over HTTP.
//!
//! Every session trains on its own thread. Handlers read snapshots and post
//! answers into the session's ticket queue; they never wait on a training
//! step. Routes live under `/v1`, and `/v1/sessions/{id}/events` upgrades to
//! a WebSocket that replays the session's event log from `?from=<index>`.

pub mod api;
pub mod events;
pub mod runner;

pub use api::{router, ApiError, AppState, ServiceConfig};
pub use events::{Event, EventKind, EventLog};
pub use runner::{Runner, Snapshot, Status};

/// Serves the API on `listener` until the future is dropped.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
