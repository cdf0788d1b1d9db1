//! Experiment harness for accelerator-in-the-loop CNN training.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 runtime error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{cmd_eval, cmd_finetune, cmd_pretrain, cmd_sweep, SweepAxis};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "fltrain",
    about = "Train fixed-point CNNs against a simulated unstable accelerator",
    version
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Experiment configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per CPU).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Scripted config overrides, e.g. --set fault.rate=1e-3 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Off-line float training plus fixed-point calibration.
    Pretrain,
    /// Fine-tune a checkpoint on the configured faulty device.
    Finetune {
        /// Starting checkpoint.
        #[arg(long, value_name = "CKPT")]
        from: PathBuf,
    },
    /// Evaluate a checkpoint on the configured device.
    Eval {
        /// Checkpoint to evaluate.
        #[arg(long, value_name = "CKPT")]
        from: PathBuf,
        /// Repeat evaluations under distinct fault seeds.
        #[arg(long, default_value_t = 1, value_name = "N")]
        repeats: usize,
    },
    /// Accuracy sweep over fault rates or clock frequencies.
    Sweep {
        /// Pre-trained checkpoint the sweep starts from.
        #[arg(long, value_name = "CKPT")]
        from: PathBuf,
        /// Comma-separated SEU rates, e.g. 1e-5,1e-4,1e-3.
        #[arg(long, value_delimiter = ',', value_name = "R1,R2,...")]
        rates: Vec<f64>,
        /// Comma-separated clock frequencies in MHz.
        #[arg(long, value_delimiter = ',', value_name = "F1,F2,...")]
        freqs: Vec<f64>,
        /// Also fine-tune at every point and report retrained accuracy.
        #[arg(long)]
        retrain: bool,
        /// Distinct fault seeds per point (accuracy is their mean).
        #[arg(long, default_value_t = 5, value_name = "N")]
        eval_seeds: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own help/usage text
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(RunError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

enum RunError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn run(cli: Cli) -> Result<(), RunError> {
    // Configuration is fully loaded and validated before any dataset or
    // checkpoint IO happens inside the commands.
    let config_path = cli
        .global
        .config
        .ok_or_else(|| RunError::Usage(anyhow::anyhow!("--config PATH is required")))?;
    let mut config =
        ExperimentConfig::load(&config_path, &cli.global.overrides).map_err(RunError::Usage)?;
    if let Some(seed) = cli.global.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.global.out {
        config.out_dir = out;
    }
    if let Some(workers) = cli.global.workers {
        config.workers = workers;
    }
    if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build_global()
            .map_err(|e| RunError::Usage(anyhow::anyhow!("cannot size worker pool: {e}")))?;
    }

    let sweep_axis = |rates: Vec<f64>, freqs: Vec<f64>| -> Result<SweepAxis, RunError> {
        match (rates.is_empty(), freqs.is_empty()) {
            (false, true) => Ok(SweepAxis::Rates(rates)),
            (true, false) => Ok(SweepAxis::Freqs(freqs)),
            _ => Err(RunError::Usage(anyhow::anyhow!(
                "give exactly one of --rates or --freqs"
            ))),
        }
    };

    match cli.command {
        Command::Pretrain => cmd_pretrain(&config).map_err(RunError::Runtime),
        Command::Finetune { from } => cmd_finetune(&config, &from).map_err(RunError::Runtime),
        Command::Eval { from, repeats } => {
            cmd_eval(&config, &from, repeats).map_err(RunError::Runtime)
        }
        Command::Sweep { from, rates, freqs, retrain, eval_seeds } => {
            let axis = sweep_axis(rates, freqs)?;
            cmd_sweep(&config, &from, &axis, retrain, eval_seeds).map_err(RunError::Runtime)
        }
    }
}
