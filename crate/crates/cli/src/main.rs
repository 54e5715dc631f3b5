//! `prionsim`: batch front-end for the polymerization solver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "prionsim",
    version,
    about = "Prion polymerization with joining: simulate, validate, compare"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full model and write the time series, density snapshots and manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the configured kernels against the growth hypotheses.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Integrate the closed moment system of the integrable family.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the truncated problems and tabulate level-to-level differences.
    Truncation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated, strictly increasing levels (overrides `truncation.levels`).
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
        /// Worker threads; 0 uses one per core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out } => commands::simulate(&config, out),
        Command::Validate { config } => commands::validate(&config),
        Command::Oracle { config, out } => commands::oracle(&config, out),
        Command::Truncation {
            config,
            out,
            levels,
            threads,
        } => commands::truncation(&config, out, levels, threads),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
