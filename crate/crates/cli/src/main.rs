//! `vwerc`: generate synthetic corpora, train, evaluate, ablate and inspect.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vwerc::window_gate::GateMode;

#[derive(Parser)]
#[command(name = "vwerc", version, about = "Variable-context-window emotion recognition in conversation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Shared {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Threads used for evaluation only.
    #[arg(long)]
    pub eval_threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/dev/test JSONL and labels.json for the synthetic benchmark.
    Gen {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus a JSON-lines epoch log.
    Train {
        #[command(flatten)]
        shared: Shared,
        /// Directory produced by `gen` (or laid out the same way).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Epoch log path; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a JSONL corpus.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics report path.
        #[arg(long, visible_alias = "out")]
        report: PathBuf,
        /// Evaluate under a different gate mode.
        #[arg(long)]
        mode: Option<GateMode>,
    },
    /// Train and score every cell of the ablation grid.
    Ablate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds overriding the configured list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Print window choices and field predictions for sampled utterances.
    Inspect {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        n: usize,
        /// Also write the records to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<vwerc::Error>() {
        Some(vwerc::Error::Divergence { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VWERC_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { shared, out } => commands::gen(&shared, &out),
        Command::Train {
            shared,
            data,
            out,
            log,
        } => commands::train(&shared, data, out, log),
        Command::Eval {
            shared,
            ckpt,
            data,
            report,
            mode,
        } => commands::eval(&shared, &ckpt, &data, &report, mode),
        Command::Ablate {
            shared,
            data,
            out,
            seeds,
        } => commands::ablate(&shared, data, out, seeds),
        Command::Inspect {
            shared,
            ckpt,
            data,
            n,
            out,
        } => commands::inspect(&shared, &ckpt, &data, n, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
