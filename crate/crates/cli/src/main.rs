// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod setup;

/// Spiking MTJ-neuron network simulator and XOR trainer.
#[derive(Parser)]
#[command(name = "mtjnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Override `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trial and write `trace.csv` and `spikes.txt`.
    Simulate(Common),
    /// Train and write `weights.out` and `history.csv`.
    Train(Common),
    /// Train the XOR network, evaluate all rows and the mechanism checks.
    BenchXor(Common),
    /// Sweep constant drive levels and write `latency.csv`.
    SweepLatency {
        #[command(flatten)]
        common: Common,
        /// `start:stop:step` or a comma-separated list; overrides `sweep.drives`.
        #[arg(long)]
        grid: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => commands::load(&c.config).and_then(|cfg| commands::simulate(&cfg, &c.out)),
        Command::Train(c) => commands::load(&c.config).and_then(|cfg| commands::train_cmd(&cfg, &c.out, c.seed)),
        Command::BenchXor(c) => commands::load(&c.config).and_then(|cfg| commands::bench_xor(&cfg, &c.out, c.seed)),
        Command::SweepLatency { common: c, grid } => {
            commands::load(&c.config).and_then(|cfg| commands::sweep_latency(&cfg, &c.out, grid.as_deref()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mtjnet: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
