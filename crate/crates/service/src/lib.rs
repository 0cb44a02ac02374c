//! HTTP/JSON service over the certification ledger, and the `ccs`
//! command-line client.

pub mod api;
pub mod cli;
pub mod client;
pub mod config;

use std::sync::Arc;

use ccs_core::ledger::{LedgerError, Network, POLICY_KEY};
use ccs_core::workflow::txs;

pub use api::{router, AppState};
pub use client::{Client, ClientError};
pub use config::{ConfigError, ServeConfig};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: std::net::SocketAddr, source: std::io::Error },
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

/// Builds the ledger for `config`: restores the chain file if there is one
/// and commits the configured policy if none is installed yet.
pub fn bootstrap(config: &ServeConfig) -> Result<AppState, ServiceError> {
    let net_config = config.network_config()?;
    let policy = config.load_policy()?;
    let network = match &config.chain_file {
        Some(path) => Network::open(net_config, path)?,
        None => Network::new(net_config)?,
    };
    let installed = network.with_state(|s| s.get_raw(POLICY_KEY).is_some());
    if let (Some(policy), false) = (policy, installed) {
        let admin = config.admin_keypair()?;
        network.submit(&txs::policy_update(&admin, &policy, config.bootstrap_timestamp()?))?;
    }
    Ok(AppState { network: Arc::new(network), chain_file: config.chain_file.clone() })
}

/// Serves the API on `listener` until the process is interrupted.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> Result<(), ServiceError> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

pub async fn run(config: ServeConfig) -> Result<(), ServiceError> {
    let state = bootstrap(&config)?;
    let listener = tokio::net::TcpListener::bind(config.listen)
        .await
        .map_err(|source| ServiceError::Bind { addr: config.listen, source })?;
    eprintln!("ccs listening on {} ({} blocks)", listener.local_addr()?, state.network.height());
    serve(listener, state).await
}
