//! `kemeny`: exact and simulated Kemeny constants from the command line.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "kemeny", version, about = "Kemeny's constant for Markov chains and birth-death processes")]
struct Cli {
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hitting,
    Trace,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Deficit,
    Stepcount,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact analysis of a finite chain.
    Analyze(AnalyzeArgs),
    /// Series analysis of a birth-death family.
    Bd(BdArgs),
    /// Monte-Carlo estimate of a visit deficit or of K'.
    Simulate(SimulateArgs),
    /// Build a birth-death config from a target theta sequence.
    Design(DesignArgs),
}

#[derive(Debug, clap::Args, Serialize)]
pub struct AnalyzeArgs {
    /// Chain file: {"kind": "dtmc"|"ctmc", "matrix": [[...]], "labels": [...]}.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Both)]
    pub method: Method,
    /// Cross-check tolerance; defaults to 1e-12 * m * (1 + ||G||).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Row-sum validation tolerance, relative to the row magnitude.
    #[arg(long, default_value_t = 1e-12)]
    pub validation_tol: f64,
    /// Write the mean first passage matrix (discrete) as CSV.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub mfpt_csv: Option<PathBuf>,
    /// Write the hitting-time matrix E_i[theta_j] as CSV.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub hitting_csv: Option<PathBuf>,
    /// Write the deviation matrix as CSV.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub deviation_csv: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct BdArgs {
    /// Family config, e.g. {"family": "mm1", "kind": "ctmc", "lambda": 1, "mu": 2}.
    pub config: PathBuf,
    #[arg(long, default_value_t = 1e-12)]
    pub rtol: f64,
    #[arg(long, default_value_t = 10_000_000)]
    pub max_terms: usize,
    /// Comma-separated truncation levels for a K'(N) ladder.
    #[arg(long, value_delimiter = ',')]
    pub ladder: Option<Vec<usize>>,
    /// Write the ladder as CSV (N,kprime,abs_delta).
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub ladder_csv: Option<PathBuf>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct SimulateArgs {
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub estimator: Estimator,
    /// Steps for a discrete chain, time for a continuous one.
    #[arg(long)]
    pub horizon: f64,
    #[arg(long)]
    pub trajectories: usize,
    #[arg(long)]
    pub seed: u64,
    /// Start state i (deficit estimator).
    #[arg(long)]
    pub start: Option<usize>,
    /// Target state j (deficit estimator).
    #[arg(long)]
    pub target: Option<usize>,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct DesignArgs {
    /// Rule for f_j (j >= 1), e.g. '{"rule": "inverse_square"}'.
    #[arg(long)]
    pub f_rule: String,
    /// Rule for lambda_j (j >= 0), e.g. '{"rule": "const", "value": 1}'.
    #[arg(long)]
    pub lambda_rule: String,
    /// Print only the family config, ready for `kemeny bd`.
    #[arg(long)]
    pub emit_config: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KEMENY_LOG", "error")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(args) => commands::run_analyze(args),
        Command::Bd(args) => commands::run_bd(args),
        Command::Simulate(args) => commands::run_simulate(args),
        Command::Design(args) => commands::run_design(args),
    };
    match result.and_then(|report| commands::emit(&report, cli.out.as_deref())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
