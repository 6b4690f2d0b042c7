//! Stratified K-fold splitting and validation-likelihood grid search.
//!
//! The score for a penalty pair is the held-out Gaussian validation
//! likelihood
//!
//! ```text
//! V(λ1, λ2) = Σ_v Σ_c n_{c(v)} { tr(S_{c(v)} Θ̂_{c(−v)}) − log det Θ̂_{c(−v)} }
//! ```
//!
//! where `Θ̂_{(−v)}` is fit with fold `v` removed and `S_{c(v)}` is the
//! held-out fold's class covariance. By default the held-out covariance is
//! centered at the held-out fold's own class mean; centering at the training
//! mean is available as an option.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{class_stats, fit, ClassStats, PenaltyPair, PrecisionSet};
use crate::linalg::{logdet, SymmetricMatrix};

/// Assignment of observations to folds `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    /// Row indices held out in fold `v`.
    pub fn heldout_indices(&self, v: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == v).collect()
    }

    /// Row indices kept for training when fold `v` is held out.
    pub fn training_indices(&self, v: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != v).collect()
    }
}

/// Splits each class into `k` folds as evenly as possible (within-class fold
/// sizes differ by at most one). Deterministic given the seed.
pub fn stratified_folds(y: &[usize], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("no observations to split".into()));
    }
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        members[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; y.len()];
    for (c, rows) in members.iter_mut().enumerate() {
        if rows.len() < k {
            return Err(Error::InsufficientClassSize {
                class: c,
                size: rows.len(),
                folds: k,
            });
        }
        rows.shuffle(&mut rng);
        for (pos, &i) in rows.iter().enumerate() {
            fold_of[i] = pos % k;
        }
    }
    Ok(FoldAssignment { k, fold_of })
}

/// Splits `n` unlabeled observations into `k` folds of near-equal size.
/// Folds may be empty when `n < k`.
pub fn even_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in rows.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment { k, fold_of })
}

/// Candidate values for each penalty; both lists must be strictly
/// increasing. The `λ2` list may end with `+∞` (the infinite-fusion
/// sentinel).
#[derive(Debug, Clone)]
pub struct GridSpec {
    lambda1_values: Vec<f64>,
    lambda2_values: Vec<f64>,
}

impl GridSpec {
    pub fn new(lambda1_values: Vec<f64>, lambda2_values: Vec<f64>) -> Result<Self> {
        let check = |name: &str, vals: &[f64], allow_inf: bool| -> Result<()> {
            if vals.is_empty() {
                return Err(Error::InvalidInput(format!("{name} grid is empty")));
            }
            for w in vals.windows(2) {
               if !(w[0] < w[1]) {
                    return Err(Error::InvalidInput(format!(
                        "{name} grid must be strictly increasing"
                    )));
                }
            }
            for &v in vals {
                if v.is_nan() || v < 0.0 || (!allow_inf && v.is_infinite()) {
                    return Err(Error::InvalidInput(format!(
                        "{name} grid contains an invalid value {v}"
                    )));
                }
            }
            Ok(())
        };
        check("lambda1", &lambda1_values, false)?;
        check("lambda2", &lambda2_values, true)?;
        Ok(Self {
            lambda1_values,
            lambda2_values,
        })
    }

    /// Powers of ten `10^lo ..= 10^hi`.
    pub fn decades(lo: i32, hi: i32) -> Result<Self> {
        let vals: Vec<f64> = (lo..=hi).map(|x| 10f64.powi(x)).collect();
        Self::new(vals.clone(), vals)
    }

    /// Half-decade steps `10^lo, 10^(lo+0.5), …, 10^hi`.
    pub fn half_decades(lo: i32, hi: i32) -> Result<Self> {
        let vals: Vec<f64> = (2 * lo..=2 * hi).map(|x| 10f64.powf(x as f64 / 2.0)).collect();
        Self::new(vals.clone(), vals)
    }

    pub fn lambda1_values(&self) -> &[f64] {
        &self.lambda1_values
    }

    pub fn lambda2_values(&self) -> &[f64] {
        &self.lambda2_values
    }

    pub fn len(&self) -> usize {
        self.lambda1_values.len() * self.lambda2_values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// How to center the held-out fold's covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeldOutCentering {
    /// Center at the held-out fold's own class mean.
    #[default]
    HeldOutMean,
    /// Center at the training split's class mean.
    TrainingMean,
}

/// Score (or failure diagnostic) for one grid point.
#[derive(Debug, Clone)]
pub struct ScoreEntry {
    pub lambda1: f64,
    pub lambda2: f64,
    pub score: Option<f64>,
    pub error: Option<String>,
}

/// Full diagnostics table from a grid search.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreTable {
    pub fn min_score(&self) -> Option<f64> {
        self.entries
            .iter()
            .filter_map(|e| e.score)
            .fold(None, |acc, s| Some(acc.map_or(s, |a: f64| a.min(s))))
    }
}

/// Held-out sufficient statistics for one (fold, class) pair.
pub(crate) struct HeldoutClass {
    pub(crate) count: f64,
    pub(crate) scatter: SymmetricMatrix,
}

/// Per-fold data: training statistics plus held-out scatter per class.
pub(crate) struct FoldContext {
    pub(crate) train_stats: Vec<ClassStats>,
    pub(crate) heldout: Vec<HeldoutClass>,
}

fn heldout_scatter(
    x: &DMatrix<f64>,
    rows: &[usize],
    center: &DVector<f64>,
) -> Result<SymmetricMatrix> {
    let p = x.ncols();
    let mut centered = DMatrix::zeros(rows.len(), p);
    for (k, &i) in rows.iter().enumerate() {
        centered.set_row(k, &(x.row(i) - center.transpose()));
    }
    SymmetricMatrix::symmetrized(centered.transpose() * &centered / rows.len() as f64)
}

pub(crate) fn build_fold_contexts(
    x: &DMatrix<f64>,
    y: &[usize],
    folds: &FoldAssignment,
    centering: HeldOutCentering,
) -> Result<Vec<FoldContext>> {
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let mut contexts = Vec::with_capacity(folds.k());
    for v in 0..folds.k() {
        let train_rows = folds.training_indices(v);
        let train_x = DMatrix::from_fn(train_rows.len(), x.ncols(), |i, j| x[(train_rows[i], j)]);
        let train_y: Vec<usize> = train_rows.iter().map(|&i| y[i]).collect();
        let train_stats = class_stats(&train_x, &train_y)?;

        let held_rows = folds.heldout_indices(v);
        let mut heldout = Vec::with_capacity(n_classes);
        for c in 0..n_classes {
            let class_rows: Vec<usize> =
                held_rows.iter().copied().filter(|&i| y[i] == c).collect();
            if class_rows.is_empty() {
                return Err(Error::MissingClass { class: c });
            }
            let center = match centering {
                HeldOutCentering::HeldOutMean => {
                    let mut mean = DVector::zeros(x.ncols());
                    for &i in &class_rows {
                        mean += x.row(i).transpose();
                    }
                    mean / class_rows.len() as f64
                }
                HeldOutCentering::TrainingMean => train_stats[c].mean().clone(),
            };
            heldout.push(HeldoutClass {
                count: class_rows.len() as f64,
                scatter: heldout_scatter(x, &class_rows, &center)?,
            });
        }
        contexts.push(FoldContext {
            train_stats,
            heldout,
        });
    }
    Ok(contexts)
}

/// One fold's contribution to the validation score for a fitted set of
/// precisions.
pub(crate) fn fold_score(heldout: &[HeldoutClass], precisions: &PrecisionSet) -> Result<f64> {
    let mut score = 0.0;
    for (h, theta) in heldout.iter().zip(precisions.thetas()) {
        score += h.count * (h.scatter.trace_product(theta) - logdet(theta)?);
    }
    Ok(score)
}

/// Validation-likelihood score of a single penalty pair over precomputed
/// folds; smaller is better.
pub fn validation_score(
    x: &DMatrix<f64>,
    y: &[usize],
    folds: &FoldAssignment,
    pen: &PenaltyPair,
    eps: f64,
) -> Result<f64> {
    validation_score_with(x, y, folds, pen, eps, HeldOutCentering::default())
}

pub fn validation_score_with(
    x: &DMatrix<f64>,
    y: &[usize],
    folds: &FoldAssignment,
    pen: &PenaltyPair,
    eps: f64,
    centering: HeldOutCentering,
) -> Result<f64> {
    let contexts = build_fold_contexts(x, y, folds, centering)?;
    let mut total = 0.0;
    for (v, ctx) in contexts.iter().enumerate() {
        let report = fit(&ctx.train_stats, pen, None, eps)
            .map_err(|e| e.in_fold(v, pen.lambda1(), pen.lambda2()))?;
        total += fold_score(&ctx.heldout, &report.precisions)
            .map_err(|e| e.in_fold(v, pen.lambda1(), pen.lambda2()))?;
    }
    Ok(total)
}

/// Validation-likelihood grid search. Returns the minimizing penalty pair
/// (ties broken toward larger `λ1`, then larger `λ2`) and the full score
/// table. Within each `(fold, λ1)` row, fits warm-start from the previous
/// `λ2` solution; strict convexity makes the minimizer independent of the
/// starting point.
pub fn grid_search(
    x: &DMatrix<f64>,
    y: &[usize],
    grid: &GridSpec,
    k: usize,
    seed: u64,
    eps: f64,
) -> Result<(PenaltyPair, ScoreTable)> {
    grid_search_with(x, y, grid, k, seed, eps, HeldOutCentering::default())
}

pub fn grid_search_with(
    x: &DMatrix<f64>,
    y: &[usize],
    grid: &GridSpec,
    k: usize,
    seed: u64,
    eps: f64,
    centering: HeldOutCentering,
) -> Result<(PenaltyPair, ScoreTable)> {
    let folds = stratified_folds(y, k, seed)?;
    let contexts = build_fold_contexts(x, y, &folds, centering)?;
    let n1 = grid.lambda1_values().len();
    let n2 = grid.lambda2_values().len();

    // One task per (fold, lambda1 row); the lambda2 ladder within a task is
    // sequential so each fit can warm-start from its predecessor.
    let tasks: Vec<(usize, usize)> = (0..contexts.len())
        .flat_map(|v| (0..n1).map(move |i1| (v, i1)))
        .collect();
    let row_results: Vec<Vec<std::result::Result<f64, String>>> = tasks
        .par_iter()
        .map(|&(v, i1)| {
            let ctx = &contexts[v];
            let lambda1 = grid.lambda1_values()[i1];
            let mut warm: Option<PrecisionSet> = None;
            grid.lambda2_values()
                .iter()
                .map(|&lambda2| {
                    let pen = match PenaltyPair::new(lambda1, lambda2) {
                        Ok(p) => p,
                        Err(e) => return Err(e.to_string()),
                    };
                    let fitted = fit(&ctx.train_stats, &pen, warm.as_ref(), eps)
                        .map_err(|e| e.in_fold(v, lambda1, lambda2).to_string())?;
                    if !pen.lambda2_is_infinite() {
                        warm = Some(fitted.precisions.clone());
                    }
                    fold_score(&ctx.heldout, &fitted.precisions)
                        .map_err(|e| e.in_fold(v, lambda1, lambda2).to_string())
                })
                .collect()
        })
        .collect();

    let mut entries = Vec::with_capacity(n1 * n2);
    for (i1, &lambda1) in grid.lambda1_values().iter().enumerate() {
        for (i2, &lambda2) in grid.lambda2_values().iter().enumerate() {
            let mut sum = 0.0;
            let mut failure: Option<String> = None;
            for v in 0..contexts.len() {
                match &row_results[v * n1 + i1][i2] {
                    Ok(s) => sum += s,
                    Err(e) => {
                        failure = Some(e.clone());
                        break;
                    }
                }
            }
            entries.push(match failure {
                None if sum.is_finite() => ScoreEntry {
                    lambda1,
                    lambda2,
                    score: Some(sum),
                    error: None,
                },
                None => ScoreEntry {
                    lambda1,
                    lambda2,
                    score: None,
                    error: Some("non-finite validation score".into()),
                },
                Some(e) => ScoreEntry {
                    lambda1,
                    lambda2,
                    score: None,
                    error: Some(e),
                },
            });
        }
    }

    let best = select_best(&entries)?;
    Ok((best, ScoreTable { entries }))
}

/// Argmin over the table; on ties the scan order (ascending λ1 outer,
/// ascending λ2 inner) combined with `<=` keeps the most regularized pair.
pub(crate) fn select_best(entries: &[ScoreEntry]) -> Result<PenaltyPair> {
    let mut best: Option<(f64, f64, f64)> = None;
    for e in entries {
        if let Some(s) = e.score {
            if best.map_or(true, |(bs, _, _)| s <= bs) {
                best = Some((s, e.lambda1, e.lambda2));
            }
        }
    }
    match best {
        Some((_, l1, l2)) => PenaltyPair::new(l1, l2),
        None => Err(Error::TuningFailed {
            failures: entries
                .iter()
                .filter_map(|e| e.error.clone())
                .collect(),
        }),
    }
}
