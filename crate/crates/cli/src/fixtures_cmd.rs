use std::path::PathBuf;

use clap::Args;
use focus_core::synth;

use crate::exit::{Outcome, WithCode, INPUT};
use crate::workspace::Workspace;

#[derive(Args, Debug)]
pub struct FixturesArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory, relative to the workspace root.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = synth::DEFAULT_SCENES)]
    pub scenes: usize,
}

pub fn run(ws: &Workspace, args: FixturesArgs) -> Outcome {
    let out = ws.confine(&args.out).code(INPUT)?;
    let summary = synth::generate(args.seed, args.scenes, &out).code(INPUT)?;
    crate::exit::emit(&format!(
        "wrote {} scenes ({} people, {} cars) to {}\n",
        summary.scenes,
        summary.people,
        summary.cars,
        out.display()
    ))
}
