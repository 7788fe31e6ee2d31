//! HTTP session service. Each session owns one engine fed from a dataset
//! stream; queries are answered by the dataset or by a human client through
//! the label endpoint.
//!
//! Routes (all JSON payloads carry `"v": 1`):
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | `{config, trial}` → `{id}` |
//! | GET | `/sessions/{id}/state` | counters, pending query, graph hash |
//! | POST | `/sessions/{id}/step` | `{count}` |
//! | POST | `/sessions/{id}/pacing` | `{rate}` samples per second, 0 pauses |
//! | POST | `/sessions/{id}/label` | `{sample, answer, name?}` |
//! | GET | `/sessions/{id}/snapshot` | nodes, edges, classes, accuracy curve |
//! | GET | `/sessions/{id}/events?since=&follow=` | line-delimited events |

mod api;
mod error;
pub mod session;

use std::net::SocketAddr;

pub use api::{router, AppState};
pub use error::ApiError;

pub async fn serve(listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::default())).await
}

/// Starts the service on a background thread with its own runtime and
/// returns the bound address.
pub fn spawn(addr: &str) -> std::io::Result<SocketAddr> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let local = std_listener.local_addr()?;
    std::thread::Builder::new()
        .name("mpart-server".into())
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .expect("tokio runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
                serve(listener).await.expect("server failed");
            });
        })?;
    Ok(local)
}
