//! The remixhub service: HTTP API, configuration and server lifecycle.

pub mod api;
pub mod config;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::Context;
use remixhub_core::platform::{Platform, SystemClock};
use tokio::net::TcpListener;

pub use config::Config;

/// Opens the data directory and binds the listener. Fails before serving
/// anything if either is unavailable.
pub async fn bind(config: &Config) -> anyhow::Result<(Arc<Platform>, TcpListener)> {
    let dir = config.data_dir.clone();
    let platform_config = config.platform();
    let platform = tokio::task::spawn_blocking(move || Platform::open(&dir, platform_config, Arc::new(SystemClock)))
        .await?
        .with_context(|| format!("opening data directory {}", config.data_dir.display()))?;
    let listener = TcpListener::bind(config.bind)
        .await
        .with_context(|| format!("BindFailure: cannot bind {}", config.bind))?;
    Ok((Arc::new(platform), listener))
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    platform: Arc<Platform>,
    listener: TcpListener,
    max_body_bytes: usize,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let app = api::router(platform, max_body_bytes);
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}

pub fn local_addr(listener: &TcpListener) -> SocketAddr {
    listener.local_addr().expect("bound listener has an address")
}
