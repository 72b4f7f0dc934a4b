//! `subparse`: mask discovery, multilingual training, few-shot evaluation
//! and analysis for subnetwork-masked dependency parsing.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use subparse::Error;

#[derive(Parser, Debug)]
#[command(name = "subparse", version, about = "Multilingual dependency parsing with attention-head subnetworks")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic benchmark treebanks and language vectors.
    GenToy(GenToyArgs),
    /// Stage 1: train a fresh model on one language without masks.
    Pretrain(PretrainArgs),
    /// Discover a language's head subnetwork by iterative pruning.
    Prune(PruneArgs),
    /// Multilingual training, non-episodic or meta-learning.
    Train(TrainArgs),
    /// Few-shot adaptation and evaluation on a held-out language.
    Fewshot(FewshotArgs),
    /// Train with ablation masks.
    Ablate(AblateArgs),
    /// Gradient-conflict statistics of a training trace.
    Analyze(AnalyzeArgs),
    /// Summary tables over a directory of results.
    Report(ReportArgs),
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenToyArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PretrainArgs {
    /// Directory of `<lang>-<split>.conllu` files; the vocabulary covers all of them.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub lang: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PruneArgs {
    #[arg(long)]
    pub lang: Option<String>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Stage-1 checkpoint to fine-tune and prune.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Number of pruning seeds whose masks are united.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub stop: Option<f64>,
    /// Output mask file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainArgs {
    /// nonep or meta.
    #[arg(long)]
    pub mode: Option<String>,
    /// none, static or dynamic.
    #[arg(long)]
    pub masks: Option<String>,
    /// Comma-separated training languages.
    #[arg(long, value_delimiter = ',')]
    pub langs: Option<Vec<String>>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory of `<lang>.json` mask files.
    #[arg(long)]
    pub maskdir: Option<PathBuf>,
    /// Stage-1 checkpoint to start from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Run stage 1 on this language first instead of loading `--init`.
    #[arg(long)]
    pub stage1: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (checkpoint, trace, final masks).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FewshotArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Test treebank `<lang>-test.conllu`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Optional dev treebank to draw the shots from.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Language code (default: taken from the test file name).
    #[arg(long)]
    pub lang: Option<String>,
    /// auto, random, none, or a mask file.
    #[arg(long)]
    pub mask: Option<String>,
    /// Language-vector CSV used by `--mask auto` and `--mask random`.
    #[arg(long)]
    pub langvec: Option<PathBuf>,
    /// Mask directory of the training languages.
    #[arg(long)]
    pub maskdir: Option<PathBuf>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Method name written to the results (default from the checkpoint).
    #[arg(long)]
    pub method: Option<String>,
    /// Output CSV of per-seed scores.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AblateArgs {
    /// shuffle, random:N, bad:N, dr20 or magnitude.
    #[arg(long)]
    pub kind: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Baseline trace for the conflict/similarity correlation.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ReportArgs {
    /// Directory of result CSVs and traces.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Method the relative changes are measured against.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 1,
        Error::Contract(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::GenToy(a) => commands::gen_toy(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Prune(a) => commands::prune(a),
        Command::Train(a) => commands::train(a),
        Command::Fewshot(a) => commands::fewshot(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
