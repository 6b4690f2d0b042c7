//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation required a positive definite matrix and did not get one.
    #[error("matrix is not positive definite ({context})")]
    PositiveDefiniteRequired { context: &'static str },

    /// The iterative symmetric eigensolver failed to converge.
    #[error("symmetric eigensolver did not converge for a {dim}x{dim} matrix")]
    EigenFailed { dim: usize },

    /// Malformed or out-of-domain input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A class label in `0..n_classes` has no observations.
    #[error("class {class} has no observations")]
    MissingClass { class: usize },

    /// A sample covariance has a zero diagonal entry, so the solver's
    /// stopping rule is undefined. Drop or jitter the offending variable.
    #[error("variable {var} of class {class} has zero sample variance")]
    DegenerateVariable { class: usize, var: usize },

    /// Blockwise coordinate descent hit its sweep cap. The partial fit is
    /// attached with `converged == false`.
    #[error("blockwise descent did not converge within {} sweeps", report.iterations)]
    FitNotConverged { report: Box<crate::estimator::FitReport> },

    /// Penalized EM hit its iteration cap. The partial state is attached
    /// with `converged == false`.
    #[error("penalized EM did not converge within {} iterations", report.iterations)]
    EmNotConverged { report: Box<crate::semisup::EmReport> },

    /// A class is too small to be split into the requested number of folds.
    #[error("class {class} has {size} observations, fewer than {folds} folds")]
    InsufficientClassSize {
        class: usize,
        size: usize,
        folds: usize,
    },

    /// Every grid point failed during tuning.
    #[error("all {} grid points failed during tuning; first failure: {}", failures.len(), failures.first().map(String::as_str).unwrap_or("<none>"))]
    TuningFailed { failures: Vec<String> },

    /// A regularized covariance estimate is singular and cannot be inverted.
    #[error("regularized covariance estimate for class {class} is singular")]
    SingularEstimate { class: usize },

    /// A mixture component lost all of its mass.
    #[error("mixture component {class} has zero effective sample size")]
    EmptyComponent { class: usize },

    /// A log-density underflowed even in the log domain.
    #[error("density computation underflowed in the log domain")]
    NumericalUnderflow,

    /// A fold-level failure during cross-validated scoring.
    #[error("fold {fold} at (lambda1={lambda1}, lambda2={lambda2}): {source}")]
    InFold {
        fold: usize,
        lambda1: f64,
        lambda2: f64,
        #[source]
        source: Box<Error>,
    },

    /// A replication-level failure inside a simulation experiment.
    #[error("replication {replication}: {source}")]
    InReplication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_fold(self, fold: usize, lambda1: f64, lambda2: f64) -> Self {
        Error::InFold {
            fold,
            lambda1,
            lambda2,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_replication(self, replication: usize) -> Self {
        Error::InReplication {
            replication,
            source: Box::new(self),
        }
    }
}
