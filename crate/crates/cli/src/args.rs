use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Pronunciation similarity: synthetic data, Siamese and triplet-ranking
/// LSTM models, lexical access and word neighborhoods.
///
/// Any flag can also come from a `--config` file of `key = value` lines
/// (`#` starts a comment). Flags given on the command line win.
#[derive(Debug, Parser)]
#[command(name = "pronsim", version, args_override_self = true)]
pub struct Cli {
    /// Worker threads for training and evaluation [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// Key-value file supplying flag defaults for the subcommand
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic lexicon and noisy train/dev/test corpora
    Gen(GenArgs),
    /// Train a binary or ranking model
    Train(TrainArgs),
    /// Lexical access WER@1 and WER@2 for a scorer
    Eval(EvalArgs),
    /// Nearest words or threshold neighborhood of a lexicon word
    Neighbors(NeighborsArgs),
    /// Ranking-model embeddings of every canonical pronunciation
    Embed(EmbedArgs),
    /// 2-D principal-component projection of the lexicon embeddings
    Project(ProjectArgs),
    /// Finite-difference check of every parameter tensor
    Gradcheck(GradcheckArgs),
    /// Test WER against the number of negatives per positive
    SweepNegatives(SweepNegativesArgs),
    /// Test WER against the embedding size
    SweepDim(SweepDimArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Binary,
    Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    Lstm,
    #[value(name = "2lstm")]
    TwoLstm,
    #[value(name = "bi2lstm")]
    BiTwoLstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerArg {
    Rank,
    Binary,
    Levenshtein,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Words other than W with similarity at least theta
    AtLeast,
    /// Words with similarity strictly below theta
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NegModeArg {
    /// Canonical pronunciations of other words
    Canonical,
    /// Training surface forms of other words
    Surface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

/// Where the inventory and lexicon come from.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory written by `gen`
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,

    /// Phone inventory, one symbol per line [default: DIR/inventory.txt]
    #[arg(long, value_name = "FILE")]
    pub inventory: Option<PathBuf>,

    /// Lexicon, `word<TAB>phones` per line [default: DIR/lexicon.tsv]
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EncoderArgs {
    /// Encoder stack
    #[arg(long, value_enum, default_value = "2lstm")]
    pub encoder: EncoderArg,

    /// Phone embedding size
    #[arg(long, default_value_t = 64)]
    pub phone_dim: usize,

    /// LSTM hidden size per direction
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,

    /// Dense layer width [default: hidden size]
    #[arg(long)]
    pub ffn_dim: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    /// Adagrad learning rate
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,

    /// Triplet hinge margin
    #[arg(long, default_value_t = 0.3)]
    pub margin: f64,

    /// Negatives drawn per positive
    #[arg(long, default_value_t = 50)]
    pub negatives: usize,

    /// Passes over the training corpus
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,

    /// Corpus examples per update
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,

    /// Source of negative pronunciations
    #[arg(long, value_enum, default_value = "canonical")]
    pub negative_mode: NegModeArg,

    /// Seed for initialization, sampling and shuffling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Synthetic task built in memory when no data directory is given.
#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    /// Use corpora written by `gen` instead of generating them
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,

    /// Lexicon size of the generated task
    #[arg(long, default_value_t = 100)]
    pub words: usize,

    /// Surface forms per word of the generated task
    #[arg(long, default_value_t = 10)]
    pub variants: usize,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Number of words to synthesize (ignored with --lexicon)
    #[arg(long, default_value_t = 100)]
    pub words: usize,

    /// Surface forms per word
    #[arg(long, default_value_t = 10)]
    pub variants: usize,

    /// Seed for the lexicon, the noise and the train/dev/test split
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Train, dev and test fractions of the words
    #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0.8,0.1,0.1")]
    pub split: Vec<f64>,

    /// Rule file, `kind<TAB>target<TAB>replacement<TAB>probability` per line
    /// [default: built-in rule pack]
    #[arg(long, value_name = "FILE")]
    pub rules: Option<PathBuf>,

    /// Phone inventory [default: built-in inventory]
    #[arg(long, value_name = "FILE")]
    pub inventory: Option<PathBuf>,

    /// Existing lexicon to corrupt instead of a synthesized one
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,

    /// Set every rule probability to zero
    #[arg(long)]
    pub zero_noise: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Training corpus [default: DIR/train.tsv]
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,

    /// Model-selection corpus [default: DIR/dev.tsv]
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,

    /// Model architecture
    #[arg(long, value_enum, default_value = "rank")]
    pub arch: ArchArg,

    #[command(flatten)]
    pub encoder: EncoderArgs,

    /// Ranking embedding size
    #[arg(long, default_value_t = 120)]
    pub embed_dim: usize,

    /// Apply ReLU to the ranking embedding
    #[arg(long)]
    pub final_relu: bool,

    #[command(flatten)]
    pub optim: OptimArgs,

    /// Output directory for the checkpoint and training report
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Similarity function used for lexical access
    #[arg(long, value_enum)]
    pub scorer: ScorerArg,

    /// Model checkpoint (rank and binary scorers)
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,

    #[command(flatten)]
    pub data: DataArgs,

    /// Which corpus of the data directory to evaluate
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,

    /// Corpus file to evaluate instead of a split
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,

    /// Directory for eval_report.json and predictions.tsv
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("query").required(true).args(["m", "theta"]))]
pub struct NeighborsArgs {
    /// Lexicon word to query
    #[arg(long)]
    pub word: String,

    /// Number of nearest words
    #[arg(long)]
    pub m: Option<usize>,

    /// Similarity threshold of the neighborhood
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,

    /// Neighborhood definition used with --theta
    #[arg(long, value_enum, default_value = "at-least", requires = "theta")]
    pub mode: ModeArg,

    /// Similarity function
    #[arg(long, value_enum, default_value = "rank")]
    pub scorer: ScorerArg,

    /// Model checkpoint (rank and binary scorers)
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,

    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Ranking model checkpoint
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    /// Output TSV [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Ranking model checkpoint
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    /// Directory for projection.tsv and projection.svg
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AuditArch {
    All,
    Binary,
    Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AuditEncoder {
    All,
    Lstm,
    #[value(name = "2lstm")]
    TwoLstm,
    #[value(name = "bi2lstm")]
    BiTwoLstm,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Architectures to check
    #[arg(long, value_enum, default_value = "all")]
    pub arch: AuditArch,

    /// Encoders to check
    #[arg(long, value_enum, default_value = "all")]
    pub encoder: AuditEncoder,

    /// Seeds 0..N are checked
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,

    /// Shortest random input
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,

    /// Longest random input
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,

    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,

    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,

    /// Coordinates sampled per tensor; smaller tensors are checked fully
    #[arg(long, default_value_t = 64)]
    pub coords: usize,

    /// Only use the plain 1e-8 denominator floor in the relative error
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SweepNegativesArgs {
    /// Negatives-per-positive values
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,25,50")]
    pub values: Vec<usize>,

    #[command(flatten)]
    pub task: TaskArgs,

    #[command(flatten)]
    pub encoder: EncoderArgs,

    /// Ranking embedding size
    #[arg(long, default_value_t = 120)]
    pub embed_dim: usize,

    #[command(flatten)]
    pub optim: OptimArgs,

    /// Output CSV [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepDimArgs {
    /// Embedding sizes
    #[arg(long, value_delimiter = ',', default_value = "40,80,120,150")]
    pub dims: Vec<usize>,

    #[command(flatten)]
    pub task: TaskArgs,

    #[command(flatten)]
    pub encoder: EncoderArgs,

    #[command(flatten)]
    pub optim: OptimArgs,

    /// Output CSV [default: stdout]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}
