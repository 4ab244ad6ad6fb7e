//! `dcue`: debiased CUE estimation, Monte Carlo tables and the embedded
//! property suite from the command line.

mod config;
mod estimate;
mod failure;
mod selftest;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;
use crate::failure::{CliResult, Failure};

#[derive(Debug, Parser)]
#[command(
    name = "dcue",
    version,
    about = "Debiased CUE for partially linear IV models with many weak instruments"
)]
struct Cli {
    /// TOML file with `[estimate]`, `[simulate]` and `[selftest]` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cross-fit, residualize and estimate on a CSV file.
    Estimate(EstimateArgs),
    /// Run Monte Carlo cells and write the metrics table plus raw replications.
    Simulate(SimulateArgs),
    /// Run the embedded property suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub treatment: Option<String>,
    /// Comma-separated instrument columns.
    #[arg(long, value_delimiter = ',')]
    pub instruments: Option<Vec<String>>,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// linear, ridge, lasso, post-lasso or spline.
    #[arg(long)]
    pub learner: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Comma-separated subset of cue, tsls, gmm.
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Null value for the Wald and K tests.
    #[arg(long, allow_negative_numbers = true)]
    pub beta_star: Option<f64>,
    /// Output directory for `estimate.json` and `estimate.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// s1_lowdim, s2_highdim or local_to_zero.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Sample sizes (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Instrument counts (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub m: Option<Vec<usize>>,
    /// Concentration parameters (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub cp: Option<Vec<f64>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learner: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Comma-separated subset of cue, tsls, gmm, oracle-cue, oracle-gmm.
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,
    /// markdown, json or csv.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to DCUE_WORKERS, then the number of CPUs.
    #[arg(long, env = "DCUE_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random instances per property.
    #[arg(long)]
    pub instances: Option<usize>,
    /// Directory for `selftest.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Perturbs the analytic gradient so the gradient property must fail.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Estimate(args) => estimate::run(args, file.estimate),
        Command::Simulate(args) => simulate::run(args, file.simulate),
        Command::Selftest(args) => selftest::run(args, file.selftest),
    }
}

/// Creates the output directory and writes `name` into it.
pub(crate) fn write_output(dir: &std::path::Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let f = Failure::config(e.to_string().trim().to_string());
            eprintln!("{}", f.to_json());
            return ExitCode::from(f.kind.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.kind.exit_code())
        }
    }
}
