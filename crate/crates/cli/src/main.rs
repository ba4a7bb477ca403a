//! `wser`: weak labelling, pre-training, fine-tuning and evaluation from the
//! command line. Every command accepts `--config <file>` (TOML or JSON) whose
//! keys mirror its long flags; flags given on the command line win.

mod commands;
mod config;
mod scorer;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::*;
use crate::config::UsageError;

#[derive(Parser)]
#[command(name = "wser", version, about = "Weakly-supervised speech emotion recognition pipeline")]
struct Cli {
    /// TOML or JSON file with values for the command's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single-threaded reference path.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Repeat for more logging.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Infer weak labels for a transcribed corpus.
    Label(LabelArgs),
    /// Weak-label accuracy of every prompt against ground truth.
    SweepPrompts(SweepArgs),
    /// Pre-train an audio classifier on weak labels.
    Pretrain(PretrainArgs),
    /// Fine-tune a checkpoint (or train from scratch) on a labelled corpus.
    Finetune(FinetuneArgs),
    /// Score a checkpoint or a predictions file.
    Evaluate(EvaluateArgs),
    /// Evaluate a checkpoint on a test split without parameter updates.
    ZeroShot(ZeroShotArgs),
    /// Majority, Word2Vec or ground-truth-transcript entailment baselines.
    Baseline(BaselineArgs),
    /// Generate a synthetic corpus with tone-and-noise audio.
    SynthCorpus(SynthArgs),
    /// Fine-tune fine- and coarse-taxonomy checkpoints identically and compare.
    CompareTaxonomies(CompareArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.deterministic {
        wser_core::par::set_deterministic(true);
    }
    let cfg = cli.config.as_deref();
    let result = match &cli.command {
        Command::Label(a) => run_label(a, cfg),
        Command::SweepPrompts(a) => run_sweep(a, cfg),
        Command::Pretrain(a) => run_pretrain(a, cfg),
        Command::Finetune(a) => run_finetune(a, cfg),
        Command::Evaluate(a) => run_evaluate(a, cfg),
        Command::ZeroShot(a) => run_zero_shot(a, cfg),
        Command::Baseline(a) => run_baseline(a, cfg),
        Command::SynthCorpus(a) => run_synth(a, cfg),
        Command::CompareTaxonomies(a) => run_compare(a, cfg),
    };
    match result {
        Ok(artifact) => {
            println!("{}", artifact.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
