//! Command-line runner: fit a model from a TOML config, simulate datasets,
//! and benchmark the split sampler against the baseline.

mod commands;
mod config;
mod error;
mod io;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "grips", version, about = "Meshed Gaussian process regression on gridded reference sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model, predict, and write chains, predictions and diagnostics.
    Fit(Args),
    /// Simulate a dataset and write train/test CSVs with the true parameters.
    Simulate(Args),
    /// Compare the split sampler with the baseline sampler on simulated data.
    Benchmark(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML configuration file.
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

type Runner = fn(&Path, Option<&Path>) -> error::Result<PathBuf>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (args, run): (&Args, Runner) = match &cli.command {
        Command::Fit(a) => (a, commands::fit),
        Command::Simulate(a) => (a, commands::simulate),
        Command::Benchmark(a) => (a, commands::benchmark),
    };
    commands::configure_threads(commands::configured_threads(&args.config));
    match run(&args.config, args.output.as_deref()) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
