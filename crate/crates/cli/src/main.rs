//! `gridcast`: synthesize data, train, calibrate, evaluate, forecast single
//! samples and plot, driven by one TOML run configuration.
//!
//! Exit codes: 0 on success, 1 when the configuration or inputs are invalid,
//! 2 when the work itself fails. Errors go to stderr as one JSON object.

mod commands;
mod config;
mod error;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind as ClapErrorKind, Parser, Subcommand};
use serde_json::json;

use crate::commands::Summary;
use crate::config::{Overrides, RunConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "gridcast", version, about = "Grid-based probabilistic trajectory forecasting")]
struct Cli {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 makes every output bit-reproducible.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; every command writes only below it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into `<out>/dataset`.
    Synth,
    /// Train the configured model into `<out>/model.ckpt`.
    Train,
    /// Sweep smoothing widths and fit temperatures into `<out>/calibrated.ckpt`.
    Calibrate {
        /// Checkpoint to calibrate; defaults to `<out>/model.ckpt`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and the persistence baseline on the test split.
    Eval {
        /// Checkpoint to evaluate; defaults to `<out>/model.ckpt`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write per-horizon heatmaps and CSVs for one sample.
    Forecast {
        /// Sample id in the dataset.
        #[arg(long)]
        sample: String,
        #[arg(long, conflicts_with = "baseline")]
        model: Option<PathBuf>,
        /// Forecast with the persistence baseline instead of a checkpoint.
        #[arg(long)]
        baseline: bool,
    },
    /// Render reliability diagrams (metrics JSON) or heatmaps (forecast CSV) as SVG.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<Summary, CliError> {
    let flags = Overrides {
        seed: cli.seed,
        threads: cli.threads,
        out: cli.out,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), std::env::vars(), &flags)?;
    // fails only when a global pool already exists, which keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Calibrate { model } => commands::calibrate(&cfg, model.as_deref()),
        Command::Eval { model } => commands::eval(&cfg, model.as_deref()),
        Command::Forecast { sample, model, baseline } => commands::forecast(&cfg, &sample, model.as_deref(), baseline),
        Command::Plot { inputs } => {
            let outputs = plot::plot(&inputs, &cfg.out.join("plots"))?;
            Ok(Summary {
                command: "plot",
                config_hash: cfg.hash(),
                outputs,
                details: json!({}),
            })
        }
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(CliError::validation(e.render().to_string().trim_end())),
    };
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}
