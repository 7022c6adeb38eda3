//! HTTP API over the pipeline.
//!
//! Runs are accepted with 202 and executed in the background, at most
//! `parallelism` at a time; clients poll `GET /api/runs/{id}`. Run manifests,
//! results and attended images are written under the workspace.

mod api;
mod state;

use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::Args;
use focus_core::backend::Backends;

use crate::exit::{Outcome, WithCode, BIND, INPUT};
use crate::workspace::Workspace;
use state::AppState;

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seconds to let in-flight runs finish after an interrupt.
    #[arg(long, default_value_t = 30)]
    pub grace: u64,
}

async fn interrupted() {
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
}

pub fn run(ws: &Workspace, args: ServeArgs) -> Outcome {
    let config = ws.load_config(args.config.as_deref()).code(INPUT)?;
    config.validate().code(INPUT)?;
    let backends = Backends::connect(&config.backends).code(INPUT)?;
    let state = Arc::new(AppState::new(ws.clone(), config, backends));

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
        .code(INPUT)?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))
            .code(BIND)?;
        let local = listener.local_addr().code(BIND)?;
        println!("listening on http://{local}");

        let app = api::router(state.clone());
        let shutdown_state = state.clone();
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                interrupted().await;
                shutdown_state.shutting_down.store(true, Ordering::SeqCst);
            })
            .await
            .context("serving")
            .code(INPUT)?;

        // queued runs never start once shutdown begins; give running ones time
        let deadline = tokio::time::Instant::now() + Duration::from_secs(args.grace);
        loop {
            let running = state
                .runs
                .lock()
                .unwrap()
                .values()
                .filter(|e| e.manifest.status == state::RunStatus::Running)
                .count();
            if running == 0 || tokio::time::Instant::now() >= deadline {
                break;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        let failed = state.fail_unfinished("service shut down before the run finished");
        eprintln!(
            "shut down; {failed} unfinished run(s) marked failed, {} left",
            state.unfinished()
        );
        Ok(())
    })
}
