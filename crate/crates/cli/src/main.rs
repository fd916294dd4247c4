use std::path::PathBuf;
use std::process::ExitCode;

use beamcast::harness::{cmd_eval, cmd_generate, cmd_sweep, cmd_train, ExperimentConfig};
use beamcast::Result;
use clap::{Args, Parser, Subcommand};
use log::info;

/// Beam alignment experiments: generate traces, train predictors, evaluate.
#[derive(Parser)]
#[command(name = "beamcast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize train and eval traces with a manifest.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the learned predictors listed in the config.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `generate`.
        #[arg(long)]
        traces: PathBuf,
        /// Continue from the checkpoints in this directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate every predictor on the dataset's eval traces.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        traces: PathBuf,
        /// Directory holding the trained checkpoints.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate across the configured velocity list.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    info!("config hash {}", cfg.hash());
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = load_config(&common)?;
            let records = cmd_generate(&cfg, &common.out)?;
            println!("wrote {} traces to {}", records.len(), common.out.display());
        }
        Command::Train { common, traces, resume } => {
            let cfg = load_config(&common)?;
            for (kind, report) in cmd_train(&cfg, &traces, &common.out, resume.as_deref())? {
                let last = report.epoch_losses.last().copied().unwrap_or(report.initial_loss);
                println!("{kind}: loss {:.4} -> {:.4}", report.initial_loss, last);
            }
        }
        Command::Eval { common, traces, checkpoint } => {
            let cfg = load_config(&common)?;
            let metrics = cmd_eval(&cfg, checkpoint.as_deref(), &traces, &common.out)?;
            for r in &metrics.gain_vs_velocity {
                println!("{} {} {} m/s: {:.4}", r.predictor, r.rule, r.velocity_mps, r.mean_norm_gain);
            }
        }
        Command::Sweep { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let metrics = cmd_sweep(&cfg, checkpoint.as_deref(), &common.out)?;
            println!("wrote {} velocity rows to {}", metrics.gain_vs_velocity.len(), common.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
