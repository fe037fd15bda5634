//! `imf`: prepare datasets, pretrain the structural encoder, train, evaluate
//! and export embeddings.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Rejected input: bad flags, configuration or data. Exit code 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "imf", version, about = "Multimodal knowledge-graph link prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Index a raw dataset directory, split it if needed, and check its feature files
    Prepare(commands::PrepareArgs),
    /// Pretrain the graph-attention encoder and write structural features
    Pretrain(commands::PretrainArgs),
    /// Train a model; keeps the best checkpoint by validation MRR
    Train(commands::TrainArgs),
    /// Filtered ranking evaluation of a checkpoint
    Eval(commands::EvalArgs),
    /// Write entity or contextual embeddings in the binary feature format
    Export(commands::ExportArgs),
    /// Generate the seeded synthetic multimodal graph
    Synth(commands::SynthArgs),
}

/// Options shared by commands that read a run configuration.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// JSON configuration file; flags and IMF_* variables override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output location
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct FeatureArgs {
    #[arg(long)]
    features_struct: Option<PathBuf>,
    #[arg(long)]
    features_visual: Option<PathBuf>,
    #[arg(long)]
    features_text: Option<PathBuf>,
    /// How empty CSV rows are filled
    #[arg(long, value_enum)]
    missing_fill: Option<FillArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FillArg {
    Zero,
    Mean,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use imf_core::Error as E;
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::Data(_) | E::Parse { .. } | E::Vocab(_) | E::Checkpoint(_) | E::Shape { .. } => 1,
                E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 1,
                _ => 2,
            };
        }
    }
    2
}

/// The error chain joined by `: `, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !last.contains(&text) {
            if !out.is_empty() {
                out += ": ";
            }
            out += &text;
        }
        last = text;
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Export(a) => commands::export(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
