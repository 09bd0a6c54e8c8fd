//! `tpot`: corpus statistics, catalog embedding, training, evaluation and
//! prediction for the TPoT personality models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tpot_core::experiment::Metric;
use tpot_core::Error;

use config::{CommonArgs, RunConfig};

const SEEDS_HELP: &str = "\
Seeds: every random choice derives from --seed (default 0).
  fold f (1-based) shuffles with        seed + 1000 * f
  the head for target index t in fold f initializes with
                                        seed + 1000 * f + t
  and shuffles its batches with         seed + 1000 * f + t + 2^32
  --strategy rotate shuffles the author list once with seed.
Configuration precedence: flags > --config JSON file > defaults
(delta 0.2, epsilon 0.5, 10 folds).
Exit codes: 0 ok, 2 bad input or configuration, 3 missing artifact,
4 embedding backend unreachable.
The embedding cache lives in $TPOT_CACHE_DIR, or <out>/cache.";

#[derive(Parser)]
#[command(name = "tpot", version, about = "Big Five scoring from essays via targeted sentence preselection", after_long_help = SEEDS_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Token-count percentiles per essay and per sentence
    Stats,
    /// Embed the 60 items and their reverses into an archive
    EmbedCatalog {
        /// Archive path (default <out>/catalog_embeddings.bin)
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// Cross-validate and keep one checkpoint per (fold, target)
    Train {
        /// Reuse a catalog archive instead of embedding the items
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// Cross-validate and write the metric report
    Eval {
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// Score new essays with one fold's trained heads
    Predict {
        #[arg(long)]
        archive: Option<PathBuf>,
        /// Checkpoint directory (default <out>/checkpoints)
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        fold: usize,
    },
    /// Generate a synthetic corpus and its topic registry
    Synth {
        #[arg(long, default_value_t = 400)]
        authors: usize,
    },
    /// Side-by-side table of saved reports, best value in bold
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// mae | acc
        #[arg(long, default_value = "mae")]
        metric: Metric,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::MissingArtifact(_) => 3,
        Error::Transport(_) => 4,
        Error::NonFinite { .. } => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Command::Compare { reports, metric } = &cli.command {
        return commands::compare(reports, *metric);
    }
    let cfg = RunConfig::resolve(&cli.common)?;
    match &cli.command {
        Command::Stats => commands::stats(&cfg),
        Command::EmbedCatalog { archive } => commands::embed_catalog(&cfg, archive.as_deref()),
        Command::Train { archive } => commands::train(&cfg, archive.as_deref()),
        Command::Eval { archive } => commands::eval(&cfg, archive.as_deref()).map(|_| ()),
        Command::Predict {
            archive,
            checkpoints,
            fold,
        } => commands::predict(&cfg, archive.as_deref(), checkpoints.as_deref(), *fold),
        Command::Synth { authors } => commands::synth(&cfg, *authors),
        Command::Compare { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
