mod checkpoint;
mod commands;
mod config;
mod dataset;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use optimux::harness::PerturbationKind;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::Outputs;

/// Train and evaluate multiplexed hybrid digital-optical video detectors.
#[derive(Debug, Parser)]
#[command(name = "optimux", version)]
struct Cli {
    /// Experiment config (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,

    /// Worker threads. Computation is sequential and deterministic; the
    /// value is validated and recorded.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic train/test/finetune sets as PGM frames.
    GenData,
    /// Train a hybrid model and save a checkpoint.
    Train,
    /// Adapt a trained checkpoint to the finetune set.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test set.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Accuracy against noise, blur and JPEG degradation.
    SweepDegrade {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Limit to one kind: noise, blur or jpeg.
        #[arg(long)]
        kind: Option<PerturbationKind>,
    },
    /// Accuracy over a grid of sensor misalignments.
    SweepMisalign {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Transfer attack with universal perturbations against one or more
    /// checkpoints and a digital baseline.
    Attack {
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Cross-talk matrix of the configured (or checkpointed) optics.
    Crosstalk {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Energy estimate per video and per batch.
    Energy {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score histogram and CDF tables for plotting.
    ExportFigures {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Finetune { .. } => "finetune",
            Command::Eval { .. } => "eval",
            Command::SweepDegrade { .. } => "sweep-degrade",
            Command::SweepMisalign { .. } => "sweep-misalign",
            Command::Attack { .. } => "attack",
            Command::Crosstalk { .. } => "crosstalk",
            Command::Energy { .. } => "energy",
            Command::ExportFigures { .. } => "export-figures",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), cli.seed, cli.out.as_deref())?;
    let mut out = Outputs::new(&cfg, cli.command.name(), cli.force)?;
    log::info!("{} config {}", cli.command.name(), out.config_hash);
    match &cli.command {
        Command::GenData => commands::gen_data(&cfg, &mut out)?,
        Command::Train => commands::train_cmd(&cfg, &mut out)?,
        Command::Finetune { checkpoint } => commands::finetune_cmd(&cfg, &mut out, checkpoint)?,
        Command::Eval { checkpoint } => commands::eval_cmd(&cfg, &mut out, checkpoint)?,
        Command::SweepDegrade { checkpoint, kind } => {
            let kinds = match kind {
                Some(k) => vec![*k],
                None => vec![PerturbationKind::GaussianNoise, PerturbationKind::GaussianBlur, PerturbationKind::Jpeg],
            };
            commands::sweep_degrade(&cfg, &mut out, checkpoint, &kinds)?
        }
        Command::SweepMisalign { checkpoint } => commands::sweep_misalign(&cfg, &mut out, checkpoint)?,
        Command::Attack { checkpoint } => commands::attack_cmd(&cfg, &mut out, checkpoint)?,
        Command::Crosstalk { checkpoint } => commands::crosstalk_cmd(&cfg, &mut out, checkpoint)?,
        Command::Energy { checkpoint } => commands::energy_cmd(&cfg, &mut out, checkpoint)?,
        Command::ExportFigures { checkpoint } => commands::export_figures(&cfg, &mut out, checkpoint)?,
    }
    let record = out.finish(&cfg, cli.threads)?;
    log::info!("run record {}", record.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
