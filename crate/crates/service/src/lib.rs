//! Ingest and query service: authenticated per-region uploads into a
//! crash-safe file store, filtered GeoJSON queries and published analysis
//! snapshots.

pub mod api;
pub mod config;
pub mod filter;
pub mod key;
pub mod store;

use std::io::Write;
use std::sync::Arc;

pub use api::{router, AppState, ACCESS_KEY_HEADER};
pub use config::Config;
pub use filter::{Filter, FilterError};
pub use key::{access_key, verify_key};
pub use store::{RegionStore, Snapshot, Store, StoreError, StoredRide};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] simra_core::ValidationError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("listen: {0}")]
    Io(#[from] std::io::Error),
}

impl AppState {
    pub fn new(store: Store, config: &Config) -> Self {
        AppState { store: Arc::new(store), salt: config.salt.as_str().into(), pipeline: Arc::new(config.pipeline.clone()) }
    }
}

/// Opens the store and serves until Ctrl-C. Prints `listening on <addr>`
/// to stdout once the socket is bound.
pub async fn serve(config: Config) -> Result<(), ServeError> {
    config.validate()?;
    if config.salt.is_empty() {
        eprintln!("warning: empty salt, access keys are guessable");
    }
    let store = Store::open(&config.data_dir, &config.pipeline)?;
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    let app = router(AppState::new(store, &config));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
