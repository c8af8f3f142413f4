//! `bartlab`: tokenizer training, denoising pretraining, finetuning,
//! generation, evaluation, corpus statistics and text normalization.

mod commands;
mod error;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bartlab", version, about = "Denoising seq2seq pretraining and summarization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Force ordered single-worker execution and timing-free logs.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a subword vocabulary.
    TrainTokenizer(commands::TrainTokenizerArgs),
    /// Denoising pretraining on raw documents.
    Pretrain(commands::PretrainArgs),
    /// Supervised document-to-summary training.
    Finetune(commands::FinetuneArgs),
    /// Beam-search summaries for a JSONL input.
    Generate(commands::GenerateArgs),
    /// ROUGE-1/2/L of hypotheses against references.
    Evaluate(commands::EvaluateArgs),
    /// Length and novel n-gram statistics of datasets.
    Stats(commands::StatsArgs),
    /// Apply evaluation normalization line by line.
    Normalize(commands::NormalizeArgs),
    /// Sample train/valid/test splits from a JSONL corpus.
    Split(commands::SplitArgs),
    /// Uniform mixture of several JSONL corpora.
    Mix(commands::MixArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainTokenizer(a) => commands::train_tokenizer(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Generate(a) => commands::generate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Stats(a) => commands::stats(a),
        Command::Normalize(a) => commands::normalize(a),
        Command::Split(a) => commands::split(a),
        Command::Mix(a) => commands::mix(a),
    };
    match result {
        Ok(commands::Outcome::Done) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Interrupted(path)) => {
            eprintln!("interrupted; checkpoint written to {}", path.display());
            ExitCode::from(130)
        }
        Err(e) => {
            eprintln!("bartlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

pub fn manifest_path_for_file(out: &std::path::Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
