mod audit;
mod config;
mod plot;
mod regions;
mod reproduce;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lipscope::lipschitz::AuditError;
use lipscope::train::TrainError;
use lipscope::NnError;
use thiserror::Error;

use crate::audit::Which;
use crate::reproduce::Figure;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    MissingData(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("{0}")]
    Io(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Diverged(_) => 3,
            Failure::MissingData(_) => 4,
            Failure::Refused(_) => 5,
            Failure::Io(_) => 1,
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => Failure::Diverged(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<NnError> for Failure {
    fn from(e: NnError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<AuditError> for Failure {
    fn from(e: AuditError) -> Self {
        match e {
            AuditError::MissingBiasTrace | AuditError::MissingCheckpoint(_) => {
                Failure::MissingData(e.to_string())
            }
            AuditError::BceRefused
            | AuditError::CoveringRadiusTooLarge(_)
            | AuditError::BatchedRun(_)
            | AuditError::NoSteadyIterations(_)
            | AuditError::WindowTooShort(_)
            | AuditError::Invalid(_) => Failure::Refused(e.to_string()),
            AuditError::Network(_)
            | AuditError::WindowOutOfRange { .. }
            | AuditError::TauOutOfRange { .. } => Failure::Io(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "lipscope", version, about = "Train small ReLU networks and audit their bias trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (variant, seed) of an experiment config.
    Train {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Audit a run directory, or every run directory inside one.
    Audit {
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        which: Which,
    },
    /// Draw the linear-region atlas of a run or a network file.
    Regions {
        /// Run directory or network JSON file.
        source: PathBuf,
        /// Slice-plane JSON. Sinusoid runs default to their embedding plane.
        #[arg(long)]
        plane: Option<PathBuf>,
        /// Output directory (defaults to the run directory, or next to the
        /// network file).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Empty regions to run basis pursuit on.
        #[arg(long, default_value_t = 500)]
        bp_budget: usize,
    },
    /// Run a figure's desk-scale recipe.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
        #[arg(short, long)]
        out: PathBuf,
        /// Number of seeds (0, 1, ...).
        #[arg(long)]
        seeds: Option<u64>,
        /// Epoch cap per run.
        #[arg(long)]
        epochs: Option<u64>,
        /// Also write every run directory under `<out>/runs`.
        #[arg(long)]
        keep_runs: bool,
    },
}

/// Runs `f` over `items` on a pool capped by `LIPSCOPE_THREADS`.
pub fn par_map<T: Sync, R: Send>(
    items: &[T],
    f: impl Fn(&T) -> Result<R, Failure> + Sync + Send,
) -> Result<Vec<R>, Failure> {
    use rayon::prelude::*;
    let threads = std::env::var("LIPSCOPE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Io(e.to_string()))?;
    pool.install(|| items.par_iter().map(f).collect())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = config::ExperimentConfig::load(&config)?;
            for dir in run::train_experiment(&cfg, &out)? {
                println!("{}", dir.display());
            }
            Ok(())
        }
        Command::Audit { dir, which } => {
            for d in run::run_dirs(&dir)? {
                let notes = audit::audit_dir(&d, which)?;
                for n in notes {
                    eprintln!("{}: {n}", d.display());
                }
            }
            Ok(())
        }
        Command::Regions {
            source,
            plane,
            out,
            bp_budget,
        } => {
            for f in regions::cmd_regions(&source, plane.as_deref(), out.as_deref(), bp_budget)? {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Reproduce {
            figure,
            out,
            seeds,
            epochs,
            keep_runs,
        } => {
            let opts = reproduce::Options {
                seeds,
                epochs,
                keep_runs,
            };
            for f in reproduce::reproduce(figure, &out, &opts)? {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
