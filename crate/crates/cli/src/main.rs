//! `nbrnas`: benchmark generation, neighborhood-aware searches, studies and
//! landscape export.

mod cmd;
mod fmt;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "nbrnas", version, about = "Neighborhood-aware architecture search over tabular benchmarks")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, env = "NBRNAS_THREADS", default_value_t = 0, global = true)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark with planted sharp cells.
    GenBench(GenBenchArgs),
    /// Random search or neighborhood-aware random search.
    Search(SearchArgs),
    /// Gradient descent on architecture logits against the surrogate.
    GradSearch(GradSearchArgs),
    /// Kendall's tau of each criterion against test-error rankings.
    RankEval(RankEvalArgs),
    /// Flat-vs-sharp split of the best cells by validation error.
    FlatAnalysis(FlatAnalysisArgs),
    /// Surrogate values on the plane of the two leading Hessian eigenvectors.
    Landscape(LandscapeArgs),
}

#[derive(Args)]
struct GenBenchArgs {
    /// Search-space JSON file.
    #[arg(long)]
    space: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output benchmark (`.gz` suffix compresses).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    spike_fraction: f64,
    #[arg(long, default_value_t = 3.0)]
    spike_height: f64,
    #[arg(long, default_value_t = 3.0)]
    generalization_gap: f64,
    #[arg(long, default_value_t = 0.5)]
    noise_scale: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
}

/// Benchmark and the validation signal searched on.
#[derive(Args)]
struct Source {
    /// Benchmark file.
    #[arg(long)]
    bench: PathBuf,
    /// Optional search-space file the benchmark must match.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Dataset whose validation error is searched on [default: first in the header].
    #[arg(long)]
    dataset: Option<String>,
    /// Validation epoch, counted from 0 [default: last].
    #[arg(long)]
    epoch: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Rs,
    NaRs,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(value_enum)]
    method: Method,
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluations for `rs`.
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    /// Reference cells for `na-rs`.
    #[arg(long = "T", default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 10)]
    n_nbr: usize,
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// mean, median, max or var:<lambda>.
    #[arg(long, default_value = "mean")]
    agg: String,
}

#[derive(Args)]
struct GradSearchArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// mean or max.
    #[arg(long, default_value = "mean")]
    agg: String,
    #[arg(long = "T", default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    n_nbr: usize,
    /// Edges perturbed per neighbor [default: 6/14 of the edges, rounded].
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    source: Source,
    /// Test datasets to evaluate, comma separated [default: all].
    #[arg(long, value_delimiter = ',')]
    datasets: Vec<String>,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RankEvalArgs {
    #[command(flatten)]
    study: StudyArgs,
    /// Aggregations compared against the baseline.
    #[arg(long, value_delimiter = ',', default_value = "mean,median,max,var")]
    kinds: Vec<String>,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FlatAnalysisArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    /// Also select the top-k cells by each of these criteria (baseline, mean, ...).
    #[arg(long, value_delimiter = ',', requires = "criteria_out")]
    criteria: Vec<String>,
    /// Output for the criterion top-k reports.
    #[arg(long, requires = "criteria")]
    criteria_out: Option<PathBuf>,
}

#[derive(Args)]
struct LandscapeArgs {
    #[command(flatten)]
    source: Source,
    /// Center: a JSON list of per-edge distributions or a grad-search trace
    /// [default: uniform cell].
    #[arg(long, conflicts_with = "cell")]
    center: Option<PathBuf>,
    /// Center as a discrete cell string, e.g. `conv|skip|none`.
    #[arg(long)]
    cell: Option<String>,
    /// Grid points per axis (odd).
    #[arg(long, default_value_t = 41)]
    grid: usize,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Finite-difference step for the Hessian.
    #[arg(long, default_value_t = 1e-3)]
    h: f64,
    /// Grid JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::GenBench(a) => cmd::gen_bench(a),
        Command::Search(a) => cmd::search(a),
        Command::GradSearch(a) => cmd::grad_search(a),
        Command::RankEval(a) => cmd::rank_eval(a),
        Command::FlatAnalysis(a) => cmd::flat_analysis(a),
        Command::Landscape(a) => cmd::landscape(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
