//! `fecs`: run decoding experiments, latency benchmarks and metric
//! aggregation from the command line.
//!
//! Exit codes: 0 success, 1 usage, configuration or data error, 2 backend
//! error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "fecs", version, about = "Faithfulness-aware contrastive decoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decode every dataset instance with every configured method.
    Run(RunArgs),
    /// Measure mean per-instance decode time for each method.
    Bench(BenchArgs),
    /// Aggregate generation records into a summary.
    Metrics(MetricsArgs),
    /// Check a configuration file and print the resolved methods.
    Validate(ValidateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum BackendKind {
    Synthetic,
    Remote,
}

/// Overrides applied on top of the config file's backend section.
#[derive(Args, Debug, Clone, Default)]
struct BackendArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Server URL for the remote backend; falls back to $FECS_ENDPOINT.
    #[arg(long)]
    endpoint: Option<String>,
    /// Synthetic model spec file.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Report file (JSON).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Comma-separated subset of method names to run.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Seed for every method, replacing configured seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Instances decoded concurrently.
    #[arg(long)]
    parallel: Option<usize>,
    /// Sidecar JSONL of externally computed scores to merge.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Also write one generation record per line to this file.
    #[arg(long)]
    generations: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Number of instances taken from the start of the dataset.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Timed decodes per instance and method.
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Generation records, one JSON object per line.
    #[arg(long = "in")]
    input: PathBuf,
    /// Summary file; CSV when the name ends in `.csv`, JSON otherwise.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => commands::run(args),
        Command::Bench(args) => commands::bench(args),
        Command::Metrics(args) => commands::metrics(args),
        Command::Validate(args) => commands::validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
