//! The `tranception` command line: train a model, build retrieval
//! profiles, score mutants, benchmark scores against assays, filter
//! alignments and ensemble score tables.

pub mod commands;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, CliResult, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "tranception", version, about = "Protein fitness prediction with retrieval-augmented autoregressive models")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOptions,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct GlobalOptions {
    /// Print errors to stderr as one JSON object.
    #[arg(long, global = true)]
    pub json_errors: bool,
    /// Maximum worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Single worker thread; outputs are byte-identical across runs.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a FASTA corpus.
    Train(TrainArgs),
    /// Build a retrieval profile from an A2M alignment.
    BuildProfile(BuildProfileArgs),
    /// Score mutants of a wild type.
    Score(ScoreArgs),
    /// Evaluate score tables against assays.
    Benchmark(BenchmarkArgs),
    /// Keep alignment rows with at least the given identity to the seed.
    FilterMsa(FilterMsaArgs),
    /// Average score tables over the same mutants.
    Ensemble(EnsembleArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with optional `[model]` and `[train]` tables.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildProfileArgs {
    #[arg(long)]
    pub msa: PathBuf,
    /// Identity cutoff for sequence reweighting is `1 - theta`.
    #[arg(long, default_value_t = tranception_core::retrieval::DEFAULT_THETA)]
    pub theta: f64,
    /// Pseudocount added to every residue count.
    #[arg(long, default_value_t = tranception_core::retrieval::DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum UncoveredArg {
    Full,
    OneMinusAlpha,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// FASTA; the first record is the wild type.
    #[arg(long)]
    pub wild_type: PathBuf,
    /// CSV with a `mutant` column.
    #[arg(long)]
    pub mutants: PathBuf,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Weight of the retrieval term.
    #[arg(long, default_value_t = tranception_core::score::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Score left to right only.
    #[arg(long)]
    pub unidirectional: bool,
    /// Weight of the model term at positions the profile does not cover.
    #[arg(long, value_enum, default_value_t = UncoveredArg::Full)]
    pub uncovered: UncoveredArg,
    /// Residues per scoring window; defaults to the model context minus two.
    #[arg(long)]
    pub window_len: Option<usize>,
    /// Seed for replacing ambiguous wild-type residues.
    #[arg(long, default_value_t = 0)]
    pub impute_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Directory of `<assay_id>.csv` score tables.
    #[arg(long)]
    pub scores_dir: PathBuf,
    /// Directory of `<assay_id>.csv` assay tables.
    #[arg(long)]
    pub assays_dir: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterMsaArgs {
    #[arg(long)]
    pub msa: PathBuf,
    #[arg(long)]
    pub min_identity: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Score tables to average.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command line inside a thread pool sized by the global
/// options.
pub fn run(cli: Cli) -> CliResult<()> {
    let threads = if cli.global.deterministic { 1 } else { cli.global.jobs.unwrap_or(0) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::runtime(None, format!("cannot start worker threads: {e}")))?;
    let global = cli.global.clone();
    pool.install(|| match &cli.command {
        Command::Train(a) => commands::train(a, &global),
        Command::BuildProfile(a) => commands::build_profile(a, &global),
        Command::Score(a) => commands::score(a, &global),
        Command::Benchmark(a) => commands::benchmark(a, &global),
        Command::FilterMsa(a) => commands::filter_msa(a, &global),
        Command::Ensemble(a) => commands::ensemble(a, &global),
    })
}

/// Parses `args` (program name first) and runs; returns the exit code
/// after reporting any error on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let json = cli.global.json_errors;
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            if json {
                eprintln!("{}", e.to_json());
            } else {
                eprintln!("{e}");
            }
            e.kind.exit_code()
        }
    }
}
