use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Train and evaluate interleaved-decoder encoder-decoder models on token-id corpora")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic corpora or a random encoder checkpoint
    #[command(subcommand)]
    Gen(GenCommand),
    /// Apply span or translation span corruption to a corpus
    Corrupt(CorruptArgs),
    /// Build an encoder-decoder whose decoder is copied from encoder layers
    InitMap(InitMapArgs),
    /// Pre-train on corrupted shards
    Pretrain(TrainArgs),
    /// Fine-tune on parallel shards, optionally mixing in pre-training data
    Finetune(TrainArgs),
    /// Beam-decode source sequences
    Generate(GenerateArgs),
    /// Score hypotheses against references
    Eval(EvalArgs),
    /// Run an end-to-end demo pipeline
    Recipe(RecipeArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Write one `lang{N}.tsv` shard per language
    Corpus(GenCorpusArgs),
    /// Write a seeded random encoder checkpoint archive
    Encoder(GenEncoderArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kind {
    Copy,
    Reverse,
    ToyTranslation,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Task relating source and target
    #[arg(long, value_enum, default_value = "toy-translation")]
    pub kind: Kind,
    /// Vocabulary size including specials, separator and sentinels
    #[arg(long, default_value_t = 64)]
    pub vocab_size: usize,
    /// Sentinel ids reserved at the top of the vocabulary
    #[arg(long, default_value_t = 8)]
    pub num_sentinels: usize,
    /// Shortest sentence length
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    /// Longest sentence length
    #[arg(long, default_value_t = 10)]
    pub max_len: usize,
    /// Examples per language, comma separated
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    pub sizes: Vec<usize>,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenEncoderArgs {
    /// Vocabulary size
    #[arg(long, default_value_t = 64)]
    pub vocab_size: usize,
    /// Model width
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Feed-forward inner width
    #[arg(long, default_value_t = 128)]
    pub ffn_dim: usize,
    /// Encoder layers (even)
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Learned position table size
    #[arg(long, default_value_t = 64)]
    pub max_positions: usize,
    /// Initialization seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output archive directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CorruptMode {
    /// Mask spans of single sentences (first column of the input)
    Span,
    /// Mask spans of `source<TAB>target` pairs joined by a separator
    Translation,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    /// Input shard or one-sequence-per-line file
    #[arg(long)]
    pub input: PathBuf,
    /// Output shard (`corrupted<TAB>target`)
    #[arg(long)]
    pub output: PathBuf,
    /// Corruption objective
    #[arg(long, value_enum, default_value = "span")]
    pub mode: CorruptMode,
    /// Vocabulary size; sentinels occupy its top ids
    #[arg(long, default_value_t = 64)]
    pub vocab_size: usize,
    /// Number of sentinel ids
    #[arg(long, default_value_t = 8)]
    pub num_sentinels: usize,
    /// Fraction of tokens to mask [default: 0.15 for span, 0.5 for translation]
    #[arg(long)]
    pub prob: Option<f64>,
    /// Mean span length
    #[arg(long, default_value_t = 3.0)]
    pub mean_span_len: f64,
    /// Inputs are truncated to this many tokens
    #[arg(long, default_value_t = 512)]
    pub max_len: usize,
    /// Corruptions drawn per input line
    #[arg(long, default_value_t = 1)]
    pub views: usize,
    /// Sampling seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InitMapArgs {
    /// Encoder checkpoint archive directory
    #[arg(long)]
    pub encoder: PathBuf,
    /// Attention heads (must divide the hidden size)
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Output model directory
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the parameter mapping report as JSON to this file
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Initial model directory
    #[arg(long)]
    pub model: PathBuf,
    /// Training shards; several are sampled as languages by temperature
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Secondary shards drawn with probability --mix-ratio (fine-tuning strips their sentinels)
    #[arg(long, num_args = 1..)]
    pub mix_data: Vec<PathBuf>,
    /// Training configuration (TOML); flags override its keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Probability that a step draws from --mix-data
    #[arg(long)]
    pub mix_ratio: Option<f64>,
    /// Save a checkpoint every N steps (0 = never)
    #[arg(long)]
    pub save_every: Option<u64>,
    /// Total optimizer steps
    #[arg(long)]
    pub steps: Option<u64>,
    /// Peak learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Linear warmup steps
    #[arg(long)]
    pub warmup: Option<u64>,
    /// Token budget per batch
    #[arg(long)]
    pub batch_tokens: Option<usize>,
    /// Label smoothing
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Seed for shuffling, sampling and dropout
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sentinel count, used to strip mixed-in corruption targets
    #[arg(long, default_value_t = 8)]
    pub num_sentinels: usize,
    /// Average the last N saved checkpoints into the final model
    #[arg(long, default_value_t = 0)]
    pub average_last: usize,
    /// Output directory (checkpoints, train.log, final/)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Model directory
    #[arg(long)]
    pub model: PathBuf,
    /// Source sequences, one per line (first column of a shard)
    #[arg(long)]
    pub input: PathBuf,
    /// Output file, one hypothesis per line
    #[arg(long)]
    pub output: PathBuf,
    /// Beam width
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    /// Maximum output length
    #[arg(long, default_value_t = 80)]
    pub max_len: usize,
    /// Length-penalty exponent
    #[arg(long, default_value_t = 1.0)]
    pub length_penalty: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Bleu,
    #[value(name = "rougeL")]
    RougeL,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Hypotheses, one per line
    #[arg(long)]
    pub hyp: PathBuf,
    /// References, one per line
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Metric to report
    #[arg(long, value_enum, default_value = "bleu")]
    pub metric: Metric,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RecipeKind {
    PretrainDemo,
    FinetuneDemo,
    ZeroshotMixDemo,
}

#[derive(Debug, Args)]
pub struct RecipeArgs {
    /// Pipeline to run
    #[arg(value_enum)]
    pub name: RecipeKind,
    /// Seed for every stage
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Recipe configuration (TOML); keys override the built-in defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: runs/<name>-seed<seed>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}
