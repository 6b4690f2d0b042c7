//! `ridgefuse` — joint precision estimation with ridge-fusion penalties,
//! QDA classification, semi-supervised clustering, and the simulation
//! harness, driven from CSV data and JSON model files.
//!
//! Exit codes: 0 success, 2 input/parse errors, 3 numerical errors,
//! 4 fold infeasibility.

mod commands;
mod data;
mod model;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn error_code(err: &ridgefuse::Error) -> i32 {
    use ridgefuse::Error as E;
    match err {
        E::InvalidInput(_) | E::MissingClass { .. } => 2,
        E::InsufficientClassSize { .. } => 4,
        E::InFold { source, .. } | E::InReplication { source, .. } => error_code(source),
        _ => 3,
    }
}

impl From<ridgefuse::Error> for CliError {
    fn from(err: ridgefuse::Error) -> Self {
        CliError {
            code: error_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::input(err.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "ridgefuse",
    version,
    about = "Joint precision-matrix estimation with ridge and ridge-fusion penalties"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit class precision matrices on labeled data and write a model file.
    Fit(FitArgs),
    /// Select (lambda1, lambda2) by K-fold validation likelihood.
    Tune(TuneArgs),
    /// Classify rows with a fitted model; optionally report the error rate.
    Classify(ClassifyArgs),
    /// Semi-supervised clustering by penalized EM on partially labeled data.
    Cluster(ClusterArgs),
    /// Run a seeded classification-error simulation experiment.
    Simulate(SimulateArgs),
}

#[derive(Args)]
pub struct FitArgs {
    /// Labeled CSV dataset (`label` column with classes 1..C).
    #[arg(long)]
    data: PathBuf,
    /// Ridge penalty (must be positive).
    #[arg(long)]
    lambda1: f64,
    /// Fusion penalty.
    #[arg(long, conflicts_with = "lambda2_inf")]
    lambda2: Option<f64>,
    /// Constrain all class precisions to be equal (the lambda2 -> inf limit).
    #[arg(long, default_value_t = false)]
    lambda2_inf: bool,
    /// Standardize variables before fitting; the transform is stored in the
    /// model file and reapplied at classification time.
    #[arg(long, default_value_t = false)]
    standardize: bool,
    /// Solver convergence tolerance.
    #[arg(long, default_value_t = ridgefuse::estimator::DEFAULT_EPS)]
    eps: f64,
    /// Output model file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct TuneArgs {
    /// Labeled CSV dataset.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated lambda1 candidates (default: powers of ten 1e-5..1e5).
    #[arg(long, value_delimiter = ',')]
    grid1: Option<Vec<f64>>,
    /// Comma-separated lambda2 candidates; `inf` is allowed as the last
    /// entry (default: powers of ten 1e-5..1e5).
    #[arg(long, value_delimiter = ',')]
    grid2: Option<Vec<String>>,
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Fold-split seed (falls back to RIDGEFUSE_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Center held-out covariances at the training mean instead of the
    /// held-out fold mean.
    #[arg(long, default_value_t = false)]
    train_centering: bool,
    /// Solver convergence tolerance.
    #[arg(long, default_value_t = ridgefuse::estimator::DEFAULT_EPS)]
    eps: f64,
    /// Worker threads for the grid evaluation (0 = automatic).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Output score table (CSV with columns lambda1,lambda2,score).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct ClassifyArgs {
    /// Model file written by `fit` or `cluster`.
    #[arg(long)]
    model: PathBuf,
    /// CSV dataset to classify (a `label` column, if present, is ignored
    /// unless --truth is given).
    #[arg(long)]
    data: PathBuf,
    /// Treat the dataset's `label` column as ground truth and print the
    /// classification error rate.
    #[arg(long, default_value_t = false)]
    truth: bool,
    /// Output predictions CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ClusterArgs {
    /// CSV dataset; rows with an empty `label` cell are unlabeled.
    #[arg(long)]
    data: PathBuf,
    /// Ridge penalty (ignored with --tune).
    #[arg(long)]
    lambda1: Option<f64>,
    /// Fusion penalty (ignored with --tune).
    #[arg(long, conflicts_with = "lambda2_inf")]
    lambda2: Option<f64>,
    /// Constrain all class precisions to be equal.
    #[arg(long, default_value_t = false)]
    lambda2_inf: bool,
    /// Select the penalties by the unlabeled-aware validation likelihood.
    #[arg(long, default_value_t = false)]
    tune: bool,
    #[arg(long, value_delimiter = ',')]
    grid1: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    grid2: Option<Vec<String>>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// EM tolerance per unlabeled point.
    #[arg(long, default_value_t = ridgefuse::semisup::DEFAULT_EPS_EM)]
    eps_em: f64,
    /// Inner solver tolerance.
    #[arg(long, default_value_t = ridgefuse::estimator::DEFAULT_EPS)]
    eps: f64,
    /// Worker threads (0 = automatic).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Output model file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Output responsibilities CSV (default: <out>.alpha.csv).
    #[arg(long)]
    alpha_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Design: eigstruct, eig-vs-tridiag, identity, blockdiag, tridiag,
    /// semisup.
    #[arg(long)]
    design: String,
    /// Dimension p.
    #[arg(long)]
    p: usize,
    /// Second-block / second-class correlation (blockdiag, tridiag,
    /// semisup).
    #[arg(long)]
    rho: Option<f64>,
    /// Number of replications.
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated methods: ridge, rda.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["ridge".to_string(), "rda".to_string()])]
    methods: Vec<String>,
    /// Training draws per class.
    #[arg(long, default_value_t = 25)]
    train_per_class: usize,
    /// Test draws per class.
    #[arg(long, default_value_t = 500)]
    test_per_class: usize,
    /// Unlabeled draws per class (semisup design).
    #[arg(long, default_value_t = 250)]
    unlabeled_per_class: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Override the lambda1 grid (comma-separated).
    #[arg(long, value_delimiter = ',')]
    grid1: Option<Vec<f64>>,
    /// Override the lambda2 grid (comma-separated, `inf` allowed).
    #[arg(long, value_delimiter = ',')]
    grid2: Option<Vec<String>>,
    /// Use the full half-decade grid 10^-10, 10^-9.5, ..., 10^10.
    #[arg(long, default_value_t = false)]
    full_grid: bool,
    /// Worker threads (0 = automatic). Results are independent of this.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Machine-readable per-replication results (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Seed resolution: flag, then RIDGEFUSE_SEED, then 0.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("RIDGEFUSE_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| CliError::input(format!("RIDGEFUSE_SEED=`{v}` is not a valid seed"))),
        Err(_) => Ok(0),
    }
}

/// Runs `f` inside a rayon pool with the requested thread count (0 keeps
/// the default pool).
pub fn with_jobs<T: Send>(
    jobs: usize,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    if jobs == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::input(format!("cannot build thread pool: {e}")))?
            .install(f)
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => commands::fit(args),
        Command::Tune(args) => commands::tune(args),
        Command::Classify(args) => commands::classify(args),
        Command::Cluster(args) => commands::cluster(args),
        Command::Simulate(args) => commands::simulate(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
