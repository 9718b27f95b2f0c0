//! `kt-bench`: synthesize, train, evaluate, benchmark and report.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "kt-bench",
    version,
    about = "Knowledge-tracing accuracy, latency and cost benchmark"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for generation, initialisation and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Configuration override, e.g. `--set train.lr=0.003`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Interactions file (.jsonl or .csv).
    #[arg(long)]
    pub data: PathBuf,
    /// Question table (JSONL), needed for prompts and optional elsewhere.
    #[arg(long)]
    pub questions: Option<PathBuf>,
    /// Embedding cache, needed by the content model.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus calibrated to a target bias.
    Synth {
        #[arg(long)]
        students: Option<usize>,
        #[arg(long)]
        questions: Option<usize>,
        #[arg(long)]
        target_bias: Option<f64>,
    },
    /// Train one model on the training split.
    Train {
        #[arg(long)]
        model: String,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Score a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Measure single-sample latency and cost of a checkpoint.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Prompt a chat-completion endpoint for every validation target.
    LlmEval {
        /// TOML file with the `[endpoint]` (and optionally `[cost]`) sections.
        #[arg(long)]
        endpoint_config: PathBuf,
        /// Only the first N validation students.
        #[arg(long)]
        students: Option<usize>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Per-question correct-rate baseline.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Merge results.csv files into one report.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Small end-to-end run: synth, train all models, baseline, bench, report.
    Demo,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<commands::UsageError>().map_or(2, |_| 1))
        }
    }
}
