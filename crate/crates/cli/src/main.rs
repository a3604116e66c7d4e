//! `rangecert` command-line tool.
//!
//! Exit status: 0 when the best solution is certified (or the command has no
//! verdict), 2 when solving succeeded but nothing was certified, 1 on error.

mod commands;
mod config;
mod error;
mod metrics;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "rangecert", version, about = "Certifiably optimal range-only trajectory estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory [default: rangecert-out; eval writes nothing unless given].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Overrides the simulation and restart seeds.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a data set: anchors.csv, measurements.csv, ground_truth.csv.
    Simulate,
    /// Solve with restarts and certify every estimate.
    Solve {
        /// Directory holding anchors.csv, measurements.csv and optionally
        /// ground_truth.csv; simulates from the config when absent.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Also write an SVG overlay of estimate and ground truth.
        #[arg(long)]
        svg: bool,
    },
    /// RMSE and MAE of an estimate file against a ground-truth file.
    Eval {
        #[arg(long, value_name = "PATH")]
        estimate: PathBuf,
        #[arg(long, value_name = "PATH")]
        ground_truth: PathBuf,
    },
    /// Per-stage timings over the configured problem sizes.
    Bench,
    /// Certification statistics over random setups and noise levels.
    Sweep,
    /// Print the documented configuration template.
    Template,
}

fn run(cli: Cli) -> error::Result<i32> {
    if let Command::Template = cli.command {
        print!("{}", config::TEMPLATE);
        return Ok(0);
    }
    let config = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    let explicit_out = cli.out.is_some();
    let ctx = Context {
        config,
        out: cli.out.unwrap_or_else(|| PathBuf::from("rangecert-out")),
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Simulate => commands::simulate_cmd(&ctx),
        Command::Solve { data, svg } => commands::solve_cmd(&ctx, data.as_deref(), *svg),
        Command::Eval { estimate, ground_truth } => commands::eval_cmd(&ctx, estimate, ground_truth, explicit_out),
        Command::Bench => commands::bench_cmd(&ctx),
        Command::Sweep => commands::sweep_cmd(&ctx),
        Command::Template => unreachable!(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
