//! `auspex` — anticipates performance-metric anomalies by forecasting the
//! near future with a conditional diffusion model and scoring the
//! observation-forecast concatenation with an isolation forest.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "auspex",
    version,
    about = "Faster-than-real-time anomaly anticipation for performance metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key-value config file with dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Run seed (beats AUSPEX_SEED and the config file).
    #[arg(long)]
    seed: Option<u64>,

    /// Worker cap for parallel phases; 1 disables parallelism.
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    /// Override any config key, e.g. --set window.stride=2 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides, self.seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic metric file.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output data file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the diffusion forecaster on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Input data file.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss trace (default: <out>.losses.csv).
        #[arg(long)]
        losses: Option<PathBuf>,
    },
    /// Fit the isolation forest: observation phase plus incremental phase
    /// on forecast concatenations.
    FitDetector {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Trained forecaster checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Forest file to write.
        #[arg(long)]
        out: PathBuf,
        /// Feature mask to write (default: <out>.mask.txt).
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Optionally export the feature catalog manifest.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Score every test window: forecast, concatenate, featurize, detect.
    Anticipate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        forest: PathBuf,
        /// Feature mask file (default: the forest's embedded binding).
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Results file to write.
        #[arg(long)]
        out: PathBuf,
        /// Detection threshold override.
        #[arg(long)]
        threshold: Option<f64>,
        /// Record wall-clock phase durations (off keeps outputs byte-stable).
        #[arg(long)]
        timings: bool,
    },
    /// Summarize a results file into a report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Results file from `anticipate`.
        #[arg(long)]
        results: PathBuf,
        /// Optional `id,label` file overriding the labels in the results.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Report file to write (a .jsonl sibling is written too).
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { common, out } => {
            let run = common.load()?;
            commands::cmd_synth(&run, &out)
        }
        Command::Train {
            common,
            data,
            out,
            losses,
        } => {
            let run = common.load()?;
            commands::cmd_train(&run, &data, &out, losses.as_deref())
        }
        Command::FitDetector {
            common,
            data,
            checkpoint,
            out,
            mask,
            catalog,
        } => {
            let run = common.load()?;
            commands::cmd_fit_detector(
                &run,
                &data,
                &checkpoint,
                &out,
                mask.as_deref(),
                catalog.as_deref(),
                common.jobs,
            )
        }
        Command::Anticipate {
            common,
            data,
            checkpoint,
            forest,
            mask,
            out,
            threshold,
            timings,
        } => {
            let run = common.load()?;
            commands::cmd_anticipate(
                &run,
                &data,
                &checkpoint,
                &forest,
                mask.as_deref(),
                &out,
                threshold,
                timings,
                common.jobs,
            )
        }
        Command::Evaluate {
            common,
            results,
            labels,
            out,
        } => {
            let _ = common.load()?; // validates overrides even though none apply here
            commands::cmd_evaluate(&results, labels.as_deref(), &out)
        }
    }
}
