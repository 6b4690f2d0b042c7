//! Joint estimation of multiple Gaussian precision matrices with ridge and
//! ridge-fusion penalties, solved by blockwise coordinate descent.
//!
//! The crate provides:
//!
//! * [`linalg`] — dense symmetric-matrix primitives, eigendecomposition, and
//!   the ridge proximal operator `Q(S, λ)` used by every solver step;
//! * [`estimator`] — the joint ridge-fusion estimator (objective, blockwise
//!   coordinate descent, decoupled and infinite-fusion edge cases);
//! * [`tuning`] — stratified K-fold splits and validation-likelihood grid
//!   search over the penalty pair `(λ1, λ2)`;
//! * [`classify`] — the QDA decision rule, classification error rate, and a
//!   regularized discriminant analysis (RDA) baseline;
//! * [`semisup`] — penalized EM for semi-supervised Gaussian model-based
//!   clustering and its unlabeled-aware validation likelihood;
//! * [`sim`] — seeded data-generating models and experiment drivers for the
//!   classification-error benchmarks;
//! * [`refsolve`] — slow, generic descent solvers kept independent of the
//!   closed-form paths so test suites can cross-check minimizers.

pub mod classify;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod refsolve;
pub mod semisup;
pub mod sim;
pub mod tuning;

pub use error::{Error, Result};
pub use estimator::{ClassStats, FitReport, PenaltyPair, PrecisionSet};
pub use linalg::{EigenDecomposition, SymmetricMatrix};
