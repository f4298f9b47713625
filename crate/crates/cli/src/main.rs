use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use shiftflow_cli::commands;
use shiftflow_cli::config::Case;

#[derive(Parser)]
#[command(name = "shiftflow", version, about = "Flow simulation on implicit geometries with the shifted boundary method")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// JSON case configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing); defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on the configured geometry.
    Train(Io),
    /// Score a trained network against the exact geometry.
    EvalInr(Io),
    /// Build the tree, element markers and surrogate boundary.
    Mesh(Io),
    /// Run the flow solver to steady state or a final time.
    Simulate(Io),
    /// Time exact distance queries against network inference.
    BenchGeometry(Io),
}

fn run(cli: Cli) -> Result<()> {
    let (io, f): (&Io, fn(&Case, &std::path::Path) -> Result<()>) = match &cli.command {
        Command::Train(io) => (io, commands::train_cmd),
        Command::EvalInr(io) => (io, commands::eval_inr_cmd),
        Command::Mesh(io) => (io, commands::mesh_cmd),
        Command::Simulate(io) => (io, commands::simulate_cmd),
        Command::BenchGeometry(io) => (io, commands::bench_cmd),
    };
    let case = Case::load(&io.config)?;
    let out = commands::output_dir(&case, io.out.clone())?;
    f(&case, &out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(shiftflow_cli::exit_code(&e) as u8)
        }
    }
}
