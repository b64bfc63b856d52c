mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use apirag_core::eval::{Axis, Direction};
use apirag_core::Language;
use clap::{Args, Parser, Subcommand};

use config::{EmbedderKind, LlmKind};

/// Retrieval-augmented code translation between Python and Java.
#[derive(Debug, Parser)]
#[command(name = "apirag", version, about)]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for batch commands.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Accept mapping pools that still contain unreviewed drafts.
    #[arg(long, global = true)]
    pub allow_draft: bool,
    /// Increase log verbosity (-v info, -vv debug). Logs go to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the API sequences found in source files.
    Extract(ExtractArgs),
    /// Build an embedded API-sequence index from a corpus manifest.
    BuildIndex(BuildIndexArgs),
    /// Ask the LLM to draft API mappings into a pool.
    BuildMappings(BuildMappingsArgs),
    /// Apply reviewer verdicts (JSON lines on stdin) to a mapping pool.
    ReviewMappings(ReviewArgs),
    /// Show the sequences and mappings retrieved for some source code.
    Retrieve(RetrieveArgs),
    /// Translate one or more tasks.
    Translate(TranslateArgs),
    /// Computational accuracy over a benchmark dataset.
    EvalCa(EvalCaArgs),
    /// Precision@1 of cross-language sequence retrieval.
    EvalRetrieval(EvalRetrievalArgs),
    /// Computational accuracy as k or n varies.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    /// Embedding provider.
    #[arg(long, value_enum)]
    pub embedder: Option<EmbedderKind>,
    /// Vector dimension of the mock embedder.
    #[arg(long, value_name = "D")]
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct LlmArgs {
    /// Chat provider.
    #[arg(long, value_enum)]
    pub llm: Option<LlmKind>,
    /// Scripted replies for `--llm scripted`.
    #[arg(long, value_name = "FILE")]
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct KnowledgeArgs {
    /// Sequence index for a target language, e.g. `python=idx.jsonl`.
    #[arg(long = "index", value_name = "LANG=PATH")]
    pub indexes: Vec<String>,
    /// Mapping pool for a direction, e.g. `java:python=pool.jsonl`.
    #[arg(long = "pool", value_name = "SRC:TGT=PATH")]
    pub pools: Vec<String>,
    /// Number of retrieved target sequences.
    #[arg(long)]
    pub k: Option<usize>,
    /// Mappings retrieved per source API.
    #[arg(long)]
    pub n: Option<usize>,
    /// Per-program test timeout in seconds.
    #[arg(long, value_name = "SECS")]
    pub timeout: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub lang: Language,
    /// Treat each file as one program instead of splitting it into functions.
    #[arg(long)]
    pub program: bool,
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Expected manifest language.
    #[arg(long)]
    pub lang: Option<Language>,
    #[arg(long, default_value_t = 200_000)]
    pub sample_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Index file to write.
    #[arg(long, value_name = "PATH")]
    pub index: PathBuf,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, Args)]
pub struct BuildMappingsArgs {
    /// Source API names, one per line.
    #[arg(long, value_name = "FILE")]
    pub apis: PathBuf,
    #[arg(long)]
    pub source: Language,
    #[arg(long)]
    pub target: Language,
    /// Pool file; new drafts are appended when it exists.
    #[arg(long, value_name = "PATH")]
    pub pool: PathBuf,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
}

#[derive(Debug, Args)]
pub struct ReviewArgs {
    #[arg(long, value_name = "PATH")]
    pub pool: PathBuf,
    /// Also write a publishable copy here; fails while any record is unapproved.
    #[arg(long, value_name = "PATH")]
    pub publish: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// e.g. `java-to-python`.
    #[arg(long)]
    pub direction: Direction,
    /// Source API sequence such as `Math.max/2 -> Integer.parseInt/1`.
    #[arg(long, conflicts_with = "code", required_unless_present = "code")]
    pub seq: Option<String>,
    /// Source program to extract the sequence from.
    #[arg(long, value_name = "FILE")]
    pub code: Option<PathBuf>,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub knowledge: KnowledgeArgs,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    /// Task JSON file; repeat for a batch.
    #[arg(long = "task", value_name = "FILE", required = true)]
    pub tasks: Vec<PathBuf>,
    /// Exit with status 1 unless every task passes.
    #[arg(long)]
    pub strict: bool,
    /// Directory for per-task outcome files.
    #[arg(long, value_name = "DIR")]
    pub archive: Option<PathBuf>,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub knowledge: KnowledgeArgs,
}

#[derive(Debug, Args)]
pub struct EvalCaArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Directions to evaluate; defaults to both.
    #[arg(long = "direction")]
    pub directions: Vec<Direction>,
    #[arg(long, value_name = "DIR")]
    pub archive: Option<PathBuf>,
    /// Print a human-readable table to stdout.
    #[arg(long)]
    pub table: bool,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub knowledge: KnowledgeArgs,
}

#[derive(Debug, Args)]
pub struct EvalRetrievalArgs {
    /// JSON lines of `{source_lang, target_lang, source_seq, gold_seq}`.
    #[arg(long, value_name = "FILE")]
    pub pairs: PathBuf,
    /// Rank against this index instead of the gold sequences.
    #[arg(long = "against", value_name = "PATH")]
    pub against: Option<PathBuf>,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[arg(long)]
    pub direction: Direction,
    /// `k` or `n`.
    #[arg(long)]
    pub axis: Axis,
    /// Strictly increasing values, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub knowledge: KnowledgeArgs,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input files.
    Usage(String),
    /// A provider, toolchain or filesystem failure.
    Environment(String),
    /// The command ran but the result is a failure.
    Domain(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) | CliError::Environment(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Environment(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

impl From<apirag_core::Error> for CliError {
    fn from(e: apirag_core::Error) -> Self {
        CliError::Environment(e.to_string())
    }
}

macro_rules! environment_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::from(apirag_core::Error::from(e))
            }
        }
    )*};
}

environment_error!(
    apirag_core::embedding::EmbeddingError,
    apirag_core::llm::LlmError,
    apirag_core::mappings::MappingError,
    apirag_core::pipeline::PipelineError,
    apirag_core::extractor::ExtractError,
    apirag_core::testkit::TestkitError,
    apirag_core::eval::EvalError
);

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
