use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use droughtformer::{Error, Result};
use droughtformer_cli::commands::{self, Context, IndexSource};
use droughtformer_cli::config::{ForecasterKind, RunConfig};
use droughtformer_cli::exit_code;

/// Drought emulator pipeline: synthetic data, preprocessing, training,
/// forecasts, drought indices and verification.
#[derive(Parser)]
#[command(name = "droughtformer", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root random seed; overrides `seed` in the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides `threads` in the file.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic raw archive from [synth].
    Synth,
    /// Gap fill, accumulate, coarsen and derive climatologies and statistics.
    Preprocess,
    /// Single-step then multistep training; writes a checkpoint.
    Train {
        /// Continue from the existing checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after this many optimizer steps (resumable).
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Constrained autoregressive forecast from one initialization date.
    Predict {
        #[arg(long)]
        init: NaiveDate,
        #[arg(long, default_value_t = 90)]
        leads: usize,
    },
    /// SESR, soil-moisture percentiles, FDII and event tables.
    Indices {
        /// A `predict` output directory; the archive years otherwise.
        #[arg(long)]
        rollout: Option<PathBuf>,
    },
    /// Score the forecaster and baselines over the test years.
    Evaluate {
        /// Overrides [eval] forecaster.
        #[arg(long, value_enum)]
        forecaster: Option<ForecasterKind>,
    },
}

fn context(cli: &Cli) -> Result<Context> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    let ctx = Context::new(cfg, cli.out.clone())?;
    if ctx.cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(ctx.cfg.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("threads: {e}")))?;
    }
    Ok(ctx)
}

fn run(cli: &Cli) -> Result<i32> {
    let ctx = context(cli)?;
    match &cli.command {
        Command::Synth => {
            let dir = commands::cmd_synth(&ctx)?;
            eprintln!("wrote raw archive {}", dir.display());
        }
        Command::Preprocess => {
            let dir = commands::cmd_preprocess(&ctx)?;
            eprintln!("wrote processed archive {}", dir.display());
        }
        Command::Train { resume, max_steps } => {
            let s = commands::cmd_train(&ctx, *resume, *max_steps)?;
            eprintln!(
                "trained {} steps over {} epochs{}; best validation loss {}",
                s.steps,
                s.epochs,
                if s.done { "" } else { " (paused)" },
                s.best_val_loss.map_or("n/a".into(), |v| format!("{v:.6e}"))
            );
        }
        Command::Predict { init, leads } => {
            let dir = commands::cmd_predict(&ctx, *init, *leads)?;
            eprintln!("wrote forecast {}", dir.display());
        }
        Command::Indices { rollout } => {
            let source = match rollout {
                Some(p) => IndexSource::Rollout(p.clone()),
                None => IndexSource::Archive,
            };
            for dir in commands::cmd_indices(&ctx, &source)? {
                eprintln!("wrote indices {}", dir.display());
            }
        }
        Command::Evaluate { forecaster } => {
            let report = commands::cmd_evaluate(&ctx, *forecaster)?;
            eprintln!(
                "scored {} initialization dates; {} rows in {}",
                report.inits.len(),
                report.rows.len(),
                ctx.out.join("eval").display()
            );
            if !report.incidents.is_empty() {
                eprintln!("{} initialization dates dropped after numeric incidents:", report.incidents.len());
                for i in &report.incidents {
                    eprintln!("  {} {}: {}", i.init, i.source, i.message);
                }
                return Ok(4);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
