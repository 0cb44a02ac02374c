#![allow(dead_code)]

use std::sync::mpsc;

use ccs_service::{bootstrap, router, AppState, ServeConfig};

/// Bootstraps `config` and serves it on an ephemeral port from a background
/// thread. Returns the base URL and the shared state.
pub fn spawn(config: &ServeConfig) -> (String, AppState) {
    let state = bootstrap(config).expect("bootstrap");
    let served = state.clone();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let runtime = tokio::runtime::Runtime::new().unwrap();
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router(served)).await.unwrap();
        });
    });
    (format!("http://{}", rx.recv().unwrap()), state)
}
