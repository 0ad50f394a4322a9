//! `convsim` command-line interface.
//!
//! Every subcommand reads its options from flags and, optionally, from a
//! JSON config file (`--config`) whose keys are the flag names in
//! snake_case. Flags win over the file.

mod commands;
mod config;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use convsim::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "convsim", version, about = "Conversational-response sentence embeddings")]
struct Cli {
    /// Worker threads for data-parallel evaluation and embedding.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// JSON object with flat keys supplying defaults for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter a comment dump and write input/response pairs as TSV.
    Extract(ExtractArgs),
    /// Build a word and bigram vocabulary from training text.
    BuildVocab(BuildVocabArgs),
    /// Train a dual encoder and write checkpoints plus telemetry.
    Train(Box<TrainArgs>),
    /// Precision@N for response selection against sampled negatives.
    EvalResponse(EvalResponseArgs),
    /// Pearson r on a semantic textual similarity file.
    EvalSts(EvalStsArgs),
    /// Mean average precision on question-question ranking.
    EvalCqa(EvalCqaArgs),
    /// Similarity score of two sentences.
    Sim(SimArgs),
    /// Write one embedding per input line.
    Embed(EmbedArgs),
    /// Write a seeded template corpus (pairs, held-out pairs, NLI).
    GenerateSynthetic(SyntheticArgs),
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractArgs {
    /// Line-delimited JSON comments (`-` for stdin).
    #[arg(long)]
    pub comments: Option<PathBuf>,
    /// Output TSV of input/response pairs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildVocabArgs {
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Optional NLI JSON lines whose sentences are also counted.
    #[arg(long)]
    pub nli: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Dan,
    Transformer,
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    /// Conversational pairs TSV.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// NLI JSON lines for the auxiliary task.
    #[arg(long)]
    pub nli: Option<PathBuf>,
    /// Vocabulary file; built from the training text when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Copy encoder and response parameters from a pretrained checkpoint.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Continue a checkpointed run with its saved configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub encoder: Option<EncoderKind>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub dan_layers: Option<Vec<usize>>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub filter: Option<usize>,
    #[arg(long)]
    pub output_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub response_layers: Option<Vec<usize>>,
    #[arg(long)]
    pub nli_hidden: Option<usize>,

    #[arg(long)]
    pub batch_size_initial: Option<usize>,
    #[arg(long)]
    pub batch_size_late: Option<usize>,
    #[arg(long)]
    pub lr_initial: Option<f64>,
    #[arg(long)]
    pub lr_late: Option<f64>,
    #[arg(long)]
    pub switch_step: Option<usize>,
    #[arg(long)]
    pub total_steps: Option<usize>,
    #[arg(long)]
    pub nli_fraction: Option<f64>,
    /// Defaults to $CONVSIM_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Gradient-norm clip; 0 disables clipping.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalResponseArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Split label for the metrics output.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalStsArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// STS file to score.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split of `data`; guessed from the file name otherwise.
    #[arg(long)]
    pub split: Option<String>,
    /// Fit an adaptation matrix on `train`, early-stopped on `dev`.
    #[arg(long)]
    pub tune_matrix: bool,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub adapt_lr: Option<f64>,
    #[arg(long)]
    pub adapt_steps: Option<usize>,
    #[arg(long)]
    pub adapt_patience: Option<usize>,
    /// Write `gold,pred,genre` rows here.
    #[arg(long)]
    pub emit_csv: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalCqaArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Score queries without any good candidate as AP 0 instead of skipping them.
    #[arg(long)]
    pub include_zero_good: bool,
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SimArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    pub first: Option<String>,
    pub second: Option<String>,
    /// Also print the raw negative-angle score.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// One sentence per line (`-` for stdin).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub nli_examples: Option<usize>,
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    let file = cli.config.as_deref().map(config::load_file).transpose()?;
    let file = file.as_ref();
    match cli.command {
        Command::Extract(a) => commands::extract(config::merge(file, &a)?),
        Command::BuildVocab(a) => commands::build_vocab(config::merge(file, &a)?),
        Command::Train(a) => train::train(config::merge(file, &*a)?, cli.threads),
        Command::EvalResponse(a) => commands::eval_response(config::merge(file, &a)?),
        Command::EvalSts(a) => commands::eval_sts(config::merge(file, &a)?),
        Command::EvalCqa(a) => commands::eval_cqa(config::merge(file, &a)?),
        Command::Sim(a) => commands::sim(config::merge(file, &a)?),
        Command::Embed(a) => commands::embed(config::merge(file, &a)?),
        Command::GenerateSynthetic(a) => commands::generate_synthetic(config::merge(file, &a)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
