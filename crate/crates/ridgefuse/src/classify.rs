//! Quadratic discriminant analysis over fitted model parameters, the
//! classification error rate, and a regularized discriminant analysis (RDA)
//! baseline.
//!
//! The QDA score for class `c` at a point `x` is computed in the log
//! domain:
//!
//! ```text
//! score_c(x) = log π_c + ½ log det Θ_c − ½ (x − μ_c)ᵀ Θ_c (x − μ_c)
//! ```
//!
//! and the classifier takes the argmax, breaking ties toward the smallest
//! class index.

use nalgebra::{DMatrix, DVector};
use crate::error::{Error, Result};
use crate::estimator::{ClassStats, PrecisionSet};
use crate::linalg::{logdet, SymmetricMatrix};
use crate::tuning::{stratified_folds, FoldAssignment, HeldOutCentering};

/// Parameters of one Gaussian class: prior probability, mean, precision.
#[derive(Debug, Clone)]
pub struct ClassParams {
    pub pi: f64,
    pub mean: DVector<f64>,
    pub precision: SymmetricMatrix,
}

/// Full model `Ψ`: class probabilities, means, and precision matrices.
#[derive(Debug, Clone)]
pub struct ModelParams {
    classes: Vec<ClassParams>,
    logdets: Vec<f64>,
}

impl ModelParams {
    pub fn new(classes: Vec<ClassParams>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::InvalidInput("model has no classes".into()));
        }
        let p = classes[0].mean.len();
        let total_pi: f64 = classes.iter().map(|c| c.pi).sum();
        if (total_pi - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "class probabilities sum to {total_pi}, expected 1"
            )));
        }
        let mut logdets = Vec::with_capacity(classes.len());
        for c in &classes {
            if c.pi < 0.0 || !c.pi.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "class probability {} is invalid",
                    c.pi
                )));
            }
            if c.mean.len() != p || c.precision.dim() != p {
                return Err(Error::InvalidInput(
                    "class parameter dimensions are inconsistent".into(),
                ));
            }
            logdets.push(logdet(&c.precision)?);
        }
        Ok(Self { classes, logdets })
    }

    /// Assembles a model from class statistics and fitted precisions with
    /// maximum-likelihood priors `π_c = n_c / n`.
    pub fn from_stats(stats: &[ClassStats], precisions: &PrecisionSet) -> Result<Self> {
        if stats.len() != precisions.n_classes() {
            return Err(Error::InvalidInput(format!(
                "{} class statistics but {} precisions",
                stats.len(),
                precisions.n_classes()
            )));
        }
        let n: f64 = stats.iter().map(ClassStats::count).sum();
        let classes = stats
            .iter()
            .zip(precisions.thetas())
            .map(|(st, theta)| ClassParams {
                pi: st.count() / n,
                mean: st.mean().clone(),
                precision: theta.clone(),
            })
            .collect();
        Self::new(classes)
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.classes[0].mean.len()
    }

    pub fn classes(&self) -> &[ClassParams] {
        &self.classes
    }

    pub(crate) fn precision_logdet(&self, c: usize) -> f64 {
        self.logdets[c]
    }
}

/// Per-class QDA scores (Gaussian log-posterior up to a shared constant).
pub fn qda_score(x: &DVector<f64>, params: &ModelParams) -> DVector<f64> {
    DVector::from_fn(params.n_classes(), |c, _| {
        let cls = &params.classes[c];
        let centered = x - &cls.mean;
        cls.pi.ln() + 0.5 * params.precision_logdet(c)
            - 0.5 * cls.precision.quadratic_form(&centered)
    })
}

/// Argmax of [`qda_score`], smallest index on ties.
pub fn qda_predict(x: &DVector<f64>, params: &ModelParams) -> usize {
    let scores = qda_score(x, params);
    let mut best = 0;
    for c in 1..scores.len() {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    best
}

/// Classifies every row of `x`.
pub fn qda_predict_batch(x: &DMatrix<f64>, params: &ModelParams) -> Vec<usize> {
    (0..x.nrows())
        .map(|i| qda_predict(&x.row(i).transpose(), params))
        .collect()
}

/// Classification error rate: the fraction of mismatched labels.
pub fn cer(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    if predictions.len() != truth.len() || predictions.is_empty() {
        return Err(Error::InvalidInput(format!(
            "prediction and truth lengths differ ({} vs {})",
            predictions.len(),
            truth.len()
        )));
    }
    let wrong = predictions
        .iter()
        .zip(truth)
        .filter(|(p, t)| p != t)
        .count();
    Ok(wrong as f64 / predictions.len() as f64)
}

/// RDA tuning parameters: `lambda` pools class covariances toward the pooled
/// covariance, `gamma` shrinks toward a scaled identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdaParams {
    lambda: f64,
    gamma: f64,
}

impl RdaParams {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("gamma", gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "RDA {name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(Self { lambda, gamma })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// RDA covariance estimates: a pooled step
/// `S_c(λ) = ((1−λ) n_c S_c + λ n S_pool) / ((1−λ) n_c + λ n)` followed by
/// identity shrinkage `(1−γ) S_c(λ) + γ (tr S_c(λ) / p) I`. With `λ = 0`
/// this is the no-fusion form `(1−γ) S_c + γ d̄ I`.
pub fn rda_covariances(stats: &[ClassStats], params: &RdaParams) -> Result<Vec<SymmetricMatrix>> {
    if stats.is_empty() {
        return Err(Error::InvalidInput("no class statistics supplied".into()));
    }
    let p = stats[0].dim();
    let n: f64 = stats.iter().map(ClassStats::count).sum();
    let mut pooled = SymmetricMatrix::zeros(p);
    for st in stats {
        pooled = pooled.linear_combination(1.0, st.cov(), st.count() / n);
    }
    let lambda = params.lambda;
    let gamma = params.gamma;
    Ok(stats
        .iter()
        .map(|st| {
            let w_self = (1.0 - lambda) * st.count();
            let w_pool = lambda * n;
            let blended = st
                .cov()
                .scale(w_self / (w_self + w_pool))
                .linear_combination(1.0, &pooled, w_pool / (w_self + w_pool));
            let d_bar = blended.trace() / p as f64;
            blended
                .scale(1.0 - gamma)
                .linear_combination(1.0, &SymmetricMatrix::identity(p), gamma * d_bar)
        })
        .collect())
}

/// Inverts the RDA covariance estimates into precisions. A non-invertible
/// estimate (possible at `γ = 0, λ = 0` with `n_c < p`) is reported as
/// [`Error::SingularEstimate`].
pub fn rda_precisions(stats: &[ClassStats], params: &RdaParams) -> Result<PrecisionSet> {
    let covs = rda_covariances(stats, params)?;
    let mut precisions = Vec::with_capacity(covs.len());
    for (c, cov) in covs.iter().enumerate() {
        let theta = cov
            .inverse_pd("RDA covariance estimate")
            .map_err(|_| Error::SingularEstimate { class: c })?;
        precisions.push(theta);
    }
    PrecisionSet::new(precisions)
}

/// Candidate values for the RDA pair; both lists live in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct RdaGrid {
    lambda_values: Vec<f64>,
    gamma_values: Vec<f64>,
}

impl RdaGrid {
    pub fn new(lambda_values: Vec<f64>, gamma_values: Vec<f64>) -> Result<Self> {
        for (name, vals) in [("lambda", &lambda_values), ("gamma", &gamma_values)] {
            if vals.is_empty() {
                return Err(Error::InvalidInput(format!("RDA {name} grid is empty")));
            }
            for w in vals.windows(2) {
                if !(w[0] < w[1]) {
                    return Err(Error::InvalidInput(format!(
                        "RDA {name} grid must be strictly increasing"
                    )));
                }
            }
            if vals.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput(format!(
                    "RDA {name} grid must lie in [0, 1]"
                )));
            }
        }
        Ok(Self {
            lambda_values,
            gamma_values,
        })
    }

    /// Evenly spaced `0, 1/(m−1), …, 1` in both coordinates.
    pub fn unit_lattice(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidInput("RDA lattice needs at least 2 points".into()));
        }
        let vals: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
        Self::new(vals.clone(), vals)
    }

    pub fn lambda_values(&self) -> &[f64] {
        &self.lambda_values
    }

    pub fn gamma_values(&self) -> &[f64] {
        &self.gamma_values
    }
}

/// Validation-likelihood grid search for RDA, scoring held-out folds exactly
/// as the ridge-fusion search does. Ties prefer larger `γ`, then larger `λ`
/// (more shrinkage, then more pooling).
pub fn rda_grid_search(
    x: &DMatrix<f64>,
    y: &[usize],
    grid: &RdaGrid,
    k: usize,
    seed: u64,
) -> Result<RdaParams> {
    let folds = stratified_folds(y, k, seed)?;
    rda_grid_search_with_folds(x, y, &folds, grid)
}

pub fn rda_grid_search_with_folds(
    x: &DMatrix<f64>,
    y: &[usize],
    folds: &FoldAssignment,
    grid: &RdaGrid,
) -> Result<RdaParams> {
    let contexts = crate::tuning::build_fold_contexts(x, y, folds, HeldOutCentering::default())?;
    let mut best: Option<(f64, RdaParams)> = None;
    let mut failures = Vec::new();
    for &gamma in grid.gamma_values() {
        for &lambda in grid.lambda_values() {
            let params = RdaParams::new(lambda, gamma)?;
            let mut total = 0.0;
            let mut failed = None;
            for (v, ctx) in contexts.iter().enumerate() {
                match rda_precisions(&ctx.train_stats, &params) {
                    Ok(precisions) => match crate::tuning::fold_score(&ctx.heldout, &precisions) {
                        Ok(s) => total += s,
                        Err(e) => {
                            failed = Some(e.in_fold(v, lambda, gamma).to_string());
                            break;
                        }
                    },
                    Err(e) => {
                        failed = Some(e.in_fold(v, lambda, gamma).to_string());
                        break;
                    }
                }
            }
            match failed {
                None if total.is_finite() => {
                    if best.map_or(true, |(bs, _)| total <= bs) {
                        best = Some((total, params));
                    }
                }
                None => failures.push(format!(
                    "non-finite RDA score at (lambda={lambda}, gamma={gamma})"
                )),
                Some(e) => failures.push(e),
            }
        }
    }
    best.map(|(_, p)| p).ok_or(Error::TuningFailed { failures })
}
