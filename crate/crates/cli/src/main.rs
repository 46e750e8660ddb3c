//! `derivscope` command-line interface.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors.

mod commands;
mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "derivscope",
    version,
    about = "Parseability and derivation-rule analysis of generated text"
)]
pub struct Cli {
    /// Flat `key = value` file supplying defaults for any long flag.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving outputs and run manifests.
    #[arg(long, global = true, default_value = ".", value_name = "PATH")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate a seeded synthetic parallel corpus from the toy grammar.
    Synth(SynthArgs),
    /// Keep pairs whose reference parses, optionally splitting them.
    FilterCorpus(FilterArgs),
    /// Build a frequency-ranked vocabulary.
    BuildVocab(VocabArgs),
    /// Replace out-of-vocabulary tokens.
    ApplyUnk(UnkArgs),
    /// Parse one sentence per line through a backend.
    Parse(ParseArgs),
    #[command(subcommand)]
    Stats(StatsCmd),
    #[command(subcommand)]
    Rules(RulesCmd),
    #[command(subcommand)]
    Discrim(DiscrimCmd),
    #[command(subcommand)]
    Sample(SampleCmd),
    #[command(subcommand)]
    Annotate(AnnotateCmd),
    /// Emit every table and plot-data file from upstream artifacts.
    Report(ReportArgs),
    /// Serve the toy backend over the line-delimited JSON protocol on stdio.
    ToyServe(ToyServeArgs),
}

#[derive(Subcommand, Debug)]
pub enum StatsCmd {
    /// Per-example surface statistics and their correlation with parseability.
    Surface(SurfaceArgs),
    /// Root-condition distribution of reference and output parses.
    Roots(RootsArgs),
}

#[derive(Subcommand, Debug)]
pub enum RulesCmd {
    /// Count rule usage over the parseable derivations of a parse file.
    Count(CountArgs),
    /// Compare reference and output rule counts.
    Ratio(RatioArgs),
}

#[derive(Subcommand, Debug)]
pub enum DiscrimCmd {
    /// Fit the L1-regularized classifier on the training split.
    Fit(FitArgs),
    /// Evaluate a fitted model on the validation split.
    Eval(EvalArgs),
}

#[derive(Subcommand, Debug)]
pub enum SampleCmd {
    /// Sample short exhaustively unparseable outputs into an annotation file.
    Unparseable(UnparseableArgs),
    /// Sample pairs where only the reference uses a rule.
    RuleContrast(ContrastArgs),
}

#[derive(Subcommand, Debug)]
pub enum AnnotateCmd {
    /// Summarize a completed annotation file.
    Summarize(SummarizeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub fragment_rate: f64,
    #[arg(long, default_value_t = 0.3)]
    pub noise_rate: f64,
    #[arg(long, default_value_t = 7)]
    pub max_height: usize,
    /// Grammar file (defaults to the bundled toy grammar).
    #[arg(long)]
    pub grammar: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Toy,
    External,
}

#[derive(Args, Debug, Clone)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Toy)]
    pub backend: BackendKind,
    /// Grammar file for the toy backend.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    /// Command line of an external backend, split on whitespace.
    #[arg(long)]
    pub cmd: Option<String>,
    #[arg(long, default_value_t = derivscope::gateway::DEFAULT_TIMEOUT_MS)]
    pub timeout_ms: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Requests in flight per external worker.
    #[arg(long, default_value_t = 1)]
    pub pipeline: usize,
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "parses.jsonl")]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Keep per-sentence wall-clock times in the result file.
    #[arg(long)]
    pub record_timings: bool,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// Existing parse results for the target side; parsed afresh when absent.
    #[arg(long)]
    pub parses: Option<PathBuf>,
    /// `train,valid,analysis` sizes or `train,valid` fractions.
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Args, Debug)]
pub struct VocabArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long, default_value_t = 40_000)]
    pub max_rank: usize,
    #[arg(long, default_value = "vocab.tsv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct UnkArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Typed `generic_<class>` placeholders from the lexical entries in `--parses`.
    #[arg(long, requires = "parses")]
    pub typed: bool,
    #[arg(long)]
    pub parses: Option<PathBuf>,
    /// Comma-separated coarse classes eligible for typed placeholders.
    #[arg(long, default_value = "adj,noun,verb,adv,card,prep")]
    pub classes: String,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Negative {
    /// Every outcome other than parseable.
    All,
    /// Only exhaustively unparseable outputs.
    Exhausted,
}

#[derive(Args, Debug)]
pub struct SurfaceArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub nmt: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub nmt_parses: PathBuf,
    /// Source-side corpus for the unigram model (defaults to `--src`).
    #[arg(long)]
    pub train_src: Option<PathBuf>,
    /// Target-side corpus for the unigram model (defaults to `--ref`).
    #[arg(long)]
    pub train_ref: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Negative::All)]
    pub negative: Negative,
    #[arg(long, default_value = "features.tsv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RootsArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub nmt: PathBuf,
    #[arg(long, default_value = "table1_roots.tsv")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct BagArgs {
    /// Count the root label as a rule.
    #[arg(long)]
    pub include_root: bool,
    /// Count lexical rules.
    #[arg(long)]
    pub include_lexical: bool,
}

#[derive(Args, Debug)]
pub struct CountArgs {
    #[arg(long)]
    pub parses: PathBuf,
    #[command(flatten)]
    pub bag: BagArgs,
    #[arg(long, default_value = "rule_counts.tsv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RatioArgs {
    #[arg(long)]
    pub ref_counts: PathBuf,
    #[arg(long)]
    pub nmt_counts: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub min_ref_count: u64,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = 10)]
    pub bucket_size: usize,
}

#[derive(Args, Debug, Clone)]
pub struct DatasetArgs {
    /// Reference parse results.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Output parse results.
    #[arg(long)]
    pub nmt: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Presence features instead of counts.
    #[arg(long)]
    pub binary: bool,
    #[command(flatten)]
    pub bag: BagArgs,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, default_value_t = 0.01)]
    pub c: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, default_value = "model.tsv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// `rule<TAB>description` file for the rule table.
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct UnparseableArgs {
    #[arg(long)]
    pub nmt: PathBuf,
    #[arg(long)]
    pub nmt_parses: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub max_words: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value = "annotation.tsv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ContrastArgs {
    #[arg(long)]
    pub rule: String,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub nmt: PathBuf,
    #[arg(long)]
    pub ref_parses: PathBuf,
    #[arg(long)]
    pub nmt_parses: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub max_len: usize,
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[command(flatten)]
    pub bag: BagArgs,
    #[arg(long, default_value = "contrast.tsv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SummarizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "annotation_summary.txt")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub ref_parses: PathBuf,
    #[arg(long)]
    pub nmt_parses: PathBuf,
    /// Feature rows from `stats surface`.
    #[arg(long)]
    pub features: PathBuf,
    /// Model from `discrim fit`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = 1000)]
    pub min_ref_count: u64,
    #[command(flatten)]
    pub bag: BagArgs,
}

#[derive(Args, Debug)]
pub struct ToyServeArgs {
    #[arg(long)]
    pub grammar: Option<PathBuf>,
}

/// Parses `args`, filling unset flags from `--config`.
fn parse_cli(args: Vec<OsString>) -> Result<(Cli, Vec<(String, String)>), anyhow::Error> {
    let command = Cli::command();
    let args = config::merge(&command, args)?;
    let matches = command.try_get_matches_from(args)?;
    let snapshot = commands::snapshot(&matches);
    let cli = Cli::from_arg_matches(&matches)?;
    Ok((cli, snapshot))
}

fn main() -> ExitCode {
    let (cli, snapshot) = match parse_cli(std::env::args_os().collect()) {
        Ok(v) => v,
        Err(e) => {
            if let Some(ce) = e.downcast_ref::<clap::Error>() {
                let _ = ce.print();
                return match ce.kind() {
                    clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                    _ => ExitCode::from(1),
                };
            }
            eprintln!("error: {e:#}");
            return ExitCode::from(if e.downcast_ref::<UsageError>().is_some() { 1 } else { 2 });
        }
    };
    match commands::run(cli, snapshot) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<UsageError>().is_some() { 1 } else { 2 })
        }
    }
}
