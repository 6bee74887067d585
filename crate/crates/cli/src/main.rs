//! turnwise: a batch pipeline for turn-shift pre-training and multi-turn
//! response selection, driven by one JSON run configuration.

mod artifacts;
mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::TaskChoice;

#[derive(Parser)]
#[command(name = "turnwise", version, about = "Turn-shift pre-training and response selection")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true, default_value = "turnwise.json")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read the source corpus into the canonical article file.
    Ingest,
    /// Shard article ids across the three pre-training tasks.
    Partition,
    /// Generate pre-training samples from the partitioned corpus.
    Gen {
        #[arg(long, value_enum, default_value_t = TaskChoice::All)]
        task: TaskChoice,
    },
    /// Build the vocabulary from the corpus (plus dialogue text if configured).
    Vocab,
    /// General pre-training over the generated sample files.
    Pretrain,
    /// Fine-tune response selection from a checkpoint (auxiliaries off).
    Finetune {
        /// Starting checkpoint (default: <out_dir>/pretrain.ckpt).
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Domain multi-task learning: response selection plus auxiliaries.
    Multitask {
        /// Starting checkpoint (default: <out_dir>/pretrain.ckpt).
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Rank a labelled example file and report R_n@k, MAP, MRR, P@1.
    Eval {
        /// Checkpoint to score with (default: <out_dir>/finetune.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Examples to rank (default: the configured dialogues.test file).
        #[arg(long)]
        examples: Option<PathBuf>,
    },
    /// Print per-utterance response similarities for one example.
    Inspect {
        /// Examples file (JSONL).
        #[arg(long)]
        example: PathBuf,
        /// Zero-based index into the examples file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Checkpoint to score with (default: finetune.ckpt, else pretrain.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Mark similarities at or above this value.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Check the four task-loss gradients against finite differences.
    Gradcheck,
    /// Report per-task train/valid article and sample counts.
    Stats,
    /// Re-validate every generated sample against the corpus.
    Validate,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config::load(&cli.config)?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Partition => commands::partition(&cfg),
        Command::Gen { task } => commands::gen(&cfg, task),
        Command::Vocab => commands::vocab(&cfg),
        Command::Pretrain => commands::pretrain(&cfg),
        Command::Finetune { init } => commands::finetune(&cfg, init),
        Command::Multitask { init } => commands::multitask(&cfg, init),
        Command::Eval {
            checkpoint,
            examples,
        } => commands::eval(&cfg, checkpoint, examples),
        Command::Inspect {
            example,
            index,
            checkpoint,
            threshold,
        } => commands::inspect(&cfg, example, index, checkpoint, threshold),
        Command::Gradcheck => commands::gradcheck(&cfg),
        Command::Stats => commands::stats(&cfg),
        Command::Validate => commands::validate(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
