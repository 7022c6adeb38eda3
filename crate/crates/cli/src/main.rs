//! `focus`: run the isolation, proposal and detection pipeline from the
//! command line, evaluate it over annotated datasets, serve it over HTTP, or
//! generate a synthetic mock corpus.

mod eval_cmd;
mod exit;
mod fixtures_cmd;
mod run_cmd;
mod serve;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use crate::workspace::Workspace;

#[derive(Parser, Debug)]
#[command(
    name = "focus",
    version,
    about = "Region-isolated open-vocabulary detection"
)]
struct Cli {
    /// Workspace root; every file the tool writes lands under it.
    #[arg(
        long,
        global = true,
        env = "FOCUS_WORKSPACE",
        default_value = "focus-workspace"
    )]
    workspace: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the pipeline on one image and region.
    Run(run_cmd::RunArgs),
    /// Ingest annotations, run variants over every case and write reports.
    Eval(eval_cmd::EvalArgs),
    /// Serve the HTTP API.
    Serve(serve::ServeArgs),
    /// Generate a deterministic synthetic corpus with mock fixtures.
    MockFixtures(fixtures_cmd::FixturesArgs),
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_env("FOCUS_LOG").unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let ws = match Workspace::open(&cli.workspace) {
        Ok(ws) => ws,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit::INPUT);
        }
    };
    tracing::debug!(root = %ws.root().display(), "workspace ready");
    let outcome = match cli.command {
        Command::Run(args) => run_cmd::run(&ws, args),
        Command::Eval(args) => eval_cmd::run(&ws, args),
        Command::Serve(args) => serve::run(&ws, args),
        Command::MockFixtures(args) => fixtures_cmd::run(&ws, args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
