//! Penalized EM for semi-supervised Gaussian model-based clustering.
//!
//! Labeled rows contribute complete-data terms and unlabeled rows enter
//! through mixture responsibilities. The E-step computes
//!
//! ```text
//! α_ic = π_c φ(x_i; μ_c, Θ_c) / Σ_m π_m φ(x_i; μ_m, Θ_m)
//! ```
//!
//! in the log domain; the M-step updates the class weights and means in
//! closed form and profiles the precisions through the supervised solver
//! with fractional class weights `ñ_c`. The EM iteration stops when the
//! summed absolute change of the responsibilities drops below
//! `eps_em · n_U`.

use nalgebra::{DMatrix, DVector};

use crate::classify::{ClassParams, ModelParams};
use crate::error::{Error, Result};
use crate::estimator::{class_stats, fit, ClassStats, PenaltyPair, PrecisionSet};
use crate::tuning::{even_folds, stratified_folds, FoldAssignment, GridSpec, ScoreEntry, ScoreTable};

/// Default per-unlabeled-point tolerance on the responsibility change.
pub const DEFAULT_EPS_EM: f64 = 1e-6;

/// EM iteration cap; exceeding it yields [`Error::EmNotConverged`] carrying
/// the partial state.
pub const MAX_EM_ITERATIONS: usize = 500;

/// Labeled rows (with classes `0..n_classes`) plus unlabeled rows of the
/// same dimension. Every class must appear among the labeled rows.
#[derive(Debug, Clone)]
pub struct SemiData {
    labeled_x: DMatrix<f64>,
    labeled_y: Vec<usize>,
    unlabeled_x: DMatrix<f64>,
    n_classes: usize,
}

impl SemiData {
    pub fn new(
        labeled_x: DMatrix<f64>,
        labeled_y: Vec<usize>,
        unlabeled_x: DMatrix<f64>,
    ) -> Result<Self> {
        if labeled_x.nrows() == 0 || labeled_x.ncols() == 0 {
            return Err(Error::InvalidInput("labeled data is empty".into()));
        }
        if labeled_y.len() != labeled_x.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} labeled rows",
                labeled_y.len(),
                labeled_x.nrows()
            )));
        }
        if unlabeled_x.nrows() > 0 && unlabeled_x.ncols() != labeled_x.ncols() {
            return Err(Error::InvalidInput(format!(
                "unlabeled data has {} columns but labeled data has {}",
                unlabeled_x.ncols(),
                labeled_x.ncols()
            )));
        }
        let n_classes = labeled_y.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; n_classes];
        for &c in &labeled_y {
            seen[c] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::MissingClass { class: missing });
        }
        Ok(Self {
            labeled_x,
            labeled_y,
            unlabeled_x,
            n_classes,
        })
    }

    pub fn labeled_x(&self) -> &DMatrix<f64> {
        &self.labeled_x
    }

    pub fn labeled_y(&self) -> &[usize] {
        &self.labeled_y
    }

    pub fn unlabeled_x(&self) -> &DMatrix<f64> {
        &self.unlabeled_x
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled_x.nrows()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled_x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.labeled_x.ncols()
    }

    /// Restriction to subsets of the labeled and unlabeled rows.
    fn subset(&self, labeled_rows: &[usize], unlabeled_rows: &[usize]) -> Result<SemiData> {
        let p = self.dim();
        let lx = DMatrix::from_fn(labeled_rows.len(), p, |i, j| {
            self.labeled_x[(labeled_rows[i], j)]
        });
        let ly: Vec<usize> = labeled_rows.iter().map(|&i| self.labeled_y[i]).collect();
        let ux = DMatrix::from_fn(unlabeled_rows.len(), p, |i, j| {
            self.unlabeled_x[(unlabeled_rows[i], j)]
        });
        SemiData::new(lx, ly, ux)
    }
}

/// Posterior class memberships of the unlabeled rows; every row sums to one.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    alpha: DMatrix<f64>,
}

impl Responsibilities {
    pub fn new(alpha: DMatrix<f64>) -> Result<Self> {
        for i in 0..alpha.nrows() {
            let row_sum: f64 = alpha.row(i).iter().sum();
            if (row_sum - 1.0).abs() > 1e-12 || alpha.row(i).iter().any(|&a| a < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "responsibility row {i} sums to {row_sum}"
                )));
            }
        }
        Ok(Self { alpha })
    }

    pub fn empty(n_classes: usize) -> Self {
        Self {
            alpha: DMatrix::zeros(0, n_classes),
        }
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn n_rows(&self) -> usize {
        self.alpha.nrows()
    }

    /// Hard assignment (argmax, smallest index on ties) per unlabeled row.
    pub fn assignments(&self) -> Vec<usize> {
        (0..self.alpha.nrows())
            .map(|i| {
                let mut best = 0;
                for c in 1..self.alpha.ncols() {
                    if self.alpha[(i, c)] > self.alpha[(i, best)] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Summed absolute difference against another responsibility matrix.
    fn l1_distance(&self, other: &Responsibilities) -> f64 {
        self.alpha
            .iter()
            .zip(other.alpha.iter())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Gaussian log-density `log φ(x; μ, Θ)` parametrized by the precision.
fn log_density(x: &DVector<f64>, cls: &ClassParams, logdet: f64, p: usize) -> f64 {
    let centered = x - &cls.mean;
    -0.5 * p as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * logdet
        - 0.5 * cls.precision.quadratic_form(&centered)
}

fn logsumexp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Observed-data log-likelihood: complete terms for labeled rows, mixture
/// terms (log-sum-exp stabilized) for unlabeled rows.
pub fn obs_loglik(data: &SemiData, params: &ModelParams) -> Result<f64> {
    if params.dim() != data.dim() || params.n_classes() < data.n_classes() {
        return Err(Error::InvalidInput(
            "model parameters do not match the data".into(),
        ));
    }
    let p = data.dim();
    let mut ll = 0.0;
    for (i, &c) in data.labeled_y.iter().enumerate() {
        let x = data.labeled_x.row(i).transpose();
        let cls = &params.classes()[c];
        let term = cls.pi.ln() + log_density(&x, cls, params.precision_logdet(c), p);
        if term == f64::NEG_INFINITY {
            return Err(Error::NumericalUnderflow);
        }
        ll += term;
    }
    let mut weights = vec![0.0; params.n_classes()];
    for i in 0..data.n_unlabeled() {
        let x = data.unlabeled_x.row(i).transpose();
        for (c, cls) in params.classes().iter().enumerate() {
            weights[c] = cls.pi.ln() + log_density(&x, cls, params.precision_logdet(c), p);
        }
        let term = logsumexp(&weights);
        if term == f64::NEG_INFINITY {
            return Err(Error::NumericalUnderflow);
        }
        ll += term;
    }
    Ok(ll)
}

/// Negative observed-data log-likelihood, the held-out scoring functional.
pub fn neg_obs_loglik(data: &SemiData, params: &ModelParams) -> Result<f64> {
    Ok(-obs_loglik(data, params)?)
}

/// Observed-data log-likelihood minus the ridge and fusion penalties; the
/// quantity penalized EM ascends. On the infinite-fusion constraint set the
/// fusion term is identically zero.
pub fn penalized_obs_loglik(
    data: &SemiData,
    params: &ModelParams,
    pen: &PenaltyPair,
) -> Result<f64> {
    let mut value = obs_loglik(data, params)?;
    for cls in params.classes() {
        value -= 0.5 * pen.lambda1() * cls.precision.frob_sq();
    }
    if !pen.lambda2_is_infinite() {
        let c = params.n_classes();
        for a in 0..c {
            for b in (a + 1)..c {
                value -= 0.5
                    * pen.lambda2()
                    * params.classes()[a]
                        .precision
                        .sub(&params.classes()[b].precision)
                        .frob_sq();
            }
        }
    }
    Ok(value)
}

/// E-step: responsibilities of the unlabeled rows under the current
/// parameters, computed in the log domain.
pub fn e_step(data: &SemiData, params: &ModelParams) -> Result<Responsibilities> {
    let p = data.dim();
    let c_count = params.n_classes();
    let mut alpha = DMatrix::zeros(data.n_unlabeled(), c_count);
    let mut weights = vec![0.0; c_count];
    for i in 0..data.n_unlabeled() {
        let x = data.unlabeled_x.row(i).transpose();
        for (c, cls) in params.classes().iter().enumerate() {
            weights[c] = cls.pi.ln() + log_density(&x, cls, params.precision_logdet(c), p);
        }
        let norm = logsumexp(&weights);
        if norm == f64::NEG_INFINITY {
            return Err(Error::NumericalUnderflow);
        }
        let mut row_sum = 0.0;
        for c in 0..c_count {
            let a = (weights[c] - norm).exp();
            alpha[(i, c)] = a;
            row_sum += a;
        }
        for c in 0..c_count {
            alpha[(i, c)] /= row_sum;
        }
    }
    Ok(Responsibilities { alpha })
}

/// Per-class M-step moments.
#[derive(Debug, Clone)]
pub struct ClassMoments {
    /// Effective sample size `ñ_c` (labeled count plus responsibility mass).
    pub n_tilde: f64,
    pub pi_tilde: f64,
    pub mu_tilde: DVector<f64>,
    /// Blended covariance `S̃_c`.
    pub s_tilde: crate::linalg::SymmetricMatrix,
    /// Labeled part `S̃_c^{(L)}` (divisor `n_c`, centered at `μ̃_c`).
    pub s_labeled: crate::linalg::SymmetricMatrix,
    /// Unlabeled part `S̃_c^{(U)}` (responsibility-weighted, centered at `μ̃_c`).
    pub s_unlabeled: crate::linalg::SymmetricMatrix,
    /// Labeled count `n_c`.
    pub labeled_count: f64,
    /// Responsibility mass `Σ_i α_ic`.
    pub alpha_sum: f64,
}

/// M-step moments for every class.
pub fn m_step_moments(data: &SemiData, alpha: &Responsibilities) -> Result<Vec<ClassMoments>> {
    if alpha.n_rows() != data.n_unlabeled() {
        return Err(Error::InvalidInput(format!(
            "{} responsibility rows for {} unlabeled rows",
            alpha.n_rows(),
            data.n_unlabeled()
        )));
    }
    let p = data.dim();
    let c_count = data.n_classes();
    let n_total = (data.n_labeled() + data.n_unlabeled()) as f64;
    let mut out = Vec::with_capacity(c_count);
    for c in 0..c_count {
        let labeled_rows: Vec<usize> = data
            .labeled_y
            .iter()
            .enumerate()
            .filter_map(|(i, &cls)| (cls == c).then_some(i))
            .collect();
        let n_c = labeled_rows.len() as f64;
        let alpha_sum: f64 = (0..data.n_unlabeled()).map(|i| alpha.alpha()[(i, c)]).sum();
        let n_tilde = n_c + alpha_sum;
        if n_tilde <= 0.0 {
            return Err(Error::EmptyComponent { class: c });
        }

        let mut mu = DVector::zeros(p);
        for &i in &labeled_rows {
            mu += data.labeled_x.row(i).transpose();
        }
        for i in 0..data.n_unlabeled() {
            mu += data.unlabeled_x.row(i).transpose() * alpha.alpha()[(i, c)];
        }
        mu /= n_tilde;

        let mut scatter_l = DMatrix::zeros(p, p);
        for &i in &labeled_rows {
            let d = data.labeled_x.row(i).transpose() - &mu;
            scatter_l += &d * d.transpose();
        }
        let s_labeled = crate::linalg::SymmetricMatrix::symmetrized(scatter_l / n_c)?;

        let mut scatter_u = DMatrix::zeros(p, p);
        for i in 0..data.n_unlabeled() {
            let w = alpha.alpha()[(i, c)];
            if w > 0.0 {
                let d = data.unlabeled_x.row(i).transpose() - &mu;
                scatter_u += &d * d.transpose() * w;
            }
        }
        let s_unlabeled = if alpha_sum > 0.0 {
            crate::linalg::SymmetricMatrix::symmetrized(scatter_u / alpha_sum)?
        } else {
            crate::linalg::SymmetricMatrix::zeros(p)
        };

        let s_tilde = s_labeled
            .scale(n_c / n_tilde)
            .linear_combination(1.0, &s_unlabeled, alpha_sum / n_tilde);

        out.push(ClassMoments {
            n_tilde,
            pi_tilde: n_tilde / n_total,
            mu_tilde: mu,
            s_tilde,
            s_labeled,
            s_unlabeled,
            labeled_count: n_c,
            alpha_sum,
        });
    }
    Ok(out)
}

/// M-step precision update: minimizes the profiled penalized objective by
/// running the supervised solver on `{ñ_c, μ̃_c, S̃_c}`.
pub fn m_step_precisions(
    moments: &[ClassMoments],
    pen: &PenaltyPair,
    eps: f64,
    init: Option<&PrecisionSet>,
) -> Result<PrecisionSet> {
    let stats: Vec<ClassStats> = moments
        .iter()
        .map(|m| {
            ClassStats::new_unchecked(m.n_tilde, m.mu_tilde.clone(), m.s_tilde.clone())
        })
        .collect();
    Ok(fit(&stats, pen, init, eps)?.precisions)
}

/// Result of a penalized EM run.
#[derive(Debug, Clone)]
pub struct EmReport {
    pub params: ModelParams,
    pub responsibilities: Responsibilities,
    /// Number of completed E+M rounds.
    pub iterations: usize,
    /// Penalized observed log-likelihood after initialization and after
    /// every M-step; non-decreasing.
    pub penalized_loglik_trace: Vec<f64>,
    pub converged: bool,
}

fn model_from_labeled(data: &SemiData, pen: &PenaltyPair, eps_inner: f64) -> Result<ModelParams> {
    let stats = class_stats(&data.labeled_x, &data.labeled_y)?;
    let report = fit(&stats, pen, None, eps_inner)?;
    ModelParams::from_stats(&stats, &report.precisions)
}

/// Penalized EM, seeded from the labeled rows: class probabilities and
/// means come from the labeled data and the precisions from a supervised
/// ridge-fusion fit at the same penalty.
pub fn fit_em(data: &SemiData, pen: &PenaltyPair, eps_em: f64, eps_inner: f64) -> Result<EmReport> {
    if !eps_em.is_finite() || eps_em <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "EM tolerance must be positive, got {eps_em}"
        )));
    }
    let mut params = model_from_labeled(data, pen, eps_inner)?;
    let mut trace = vec![penalized_obs_loglik(data, &params, pen)?];

    if data.n_unlabeled() == 0 {
        return Ok(EmReport {
            params,
            responsibilities: Responsibilities::empty(data.n_classes()),
            iterations: 1,
            penalized_loglik_trace: trace,
            converged: true,
        });
    }

    let threshold = eps_em * data.n_unlabeled() as f64;
    let mut alpha_prev: Option<Responsibilities> = None;
    let mut precisions: Option<PrecisionSet> = None;
    let mut iterations = 0;

    while iterations < MAX_EM_ITERATIONS {
        let alpha = e_step(data, &params)?;
        if let Some(prev) = &alpha_prev {
            if alpha.l1_distance(prev) < threshold {
                return Ok(EmReport {
                    params,
                    responsibilities: alpha,
                    iterations,
                    penalized_loglik_trace: trace,
                    converged: true,
                });
            }
        }
        let moments = m_step_moments(data, &alpha)?;
        let updated = m_step_precisions(&moments, pen, eps_inner, precisions.as_ref())?;
        let classes = moments
            .iter()
            .zip(updated.thetas())
            .map(|(m, theta)| ClassParams {
                pi: m.pi_tilde,
                mean: m.mu_tilde.clone(),
                precision: theta.clone(),
            })
            .collect();
        params = ModelParams::new(classes)?;
        trace.push(penalized_obs_loglik(data, &params, pen)?);
        precisions = Some(updated);
        alpha_prev = Some(alpha);
        iterations += 1;
    }

    let final_alpha = e_step(data, &params)?;
    Err(Error::EmNotConverged {
        report: Box::new(EmReport {
            params,
            responsibilities: final_alpha,
            iterations,
            penalized_loglik_trace: trace,
            converged: false,
        }),
    })
}

/// Fold assignments for the labeled (stratified) and unlabeled (even) parts
/// of a semi-supervised dataset.
#[derive(Debug, Clone)]
pub struct SemiFolds {
    labeled: FoldAssignment,
    unlabeled: FoldAssignment,
}

impl SemiFolds {
    pub fn labeled(&self) -> &FoldAssignment {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &FoldAssignment {
        &self.unlabeled
    }
}

/// Splits labeled rows stratified by class and unlabeled rows evenly, both
/// deterministically derived from one seed.
pub fn semisup_folds(data: &SemiData, k: usize, seed: u64) -> Result<SemiFolds> {
    let labeled = stratified_folds(&data.labeled_y, k, crate::sim::derive_seed(seed, 0))?;
    let unlabeled = even_folds(data.n_unlabeled(), k, crate::sim::derive_seed(seed, 1))?;
    Ok(SemiFolds { labeled, unlabeled })
}

/// Unlabeled-aware validation score: refits on the data with the `v`-th
/// labeled and unlabeled subsets removed and accumulates the held-out
/// negative observed log-likelihood.
pub fn semisup_validation_score(
    data: &SemiData,
    folds: &SemiFolds,
    pen: &PenaltyPair,
    eps_em: f64,
    eps_inner: f64,
) -> Result<f64> {
    let k = folds.labeled.k();
    let mut total = 0.0;
    for v in 0..k {
        let fitted = fit_em(
            &data.subset(
                &folds.labeled.training_indices(v),
                &folds.unlabeled.training_indices(v),
            )?,
            pen,
            eps_em,
            eps_inner,
        )
        .map_err(|e| e.in_fold(v, pen.lambda1(), pen.lambda2()))?;
        let heldout = data.subset(
            &folds.labeled.heldout_indices(v),
            &folds.unlabeled.heldout_indices(v),
        )?;
        total += neg_obs_loglik(&heldout, &fitted.params)
            .map_err(|e| e.in_fold(v, pen.lambda1(), pen.lambda2()))?;
    }
    Ok(total)
}

/// Grid search minimizing the semi-supervised validation score; ties prefer
/// the more regularized pair, exactly as in the supervised search.
pub fn semisup_grid_search(
    data: &SemiData,
    grid: &GridSpec,
    k: usize,
    seed: u64,
    eps_em: f64,
    eps_inner: f64,
) -> Result<(PenaltyPair, ScoreTable)> {
    use rayon::prelude::*;

    let folds = semisup_folds(data, k, seed)?;
    let points: Vec<(f64, f64)> = grid
        .lambda1_values()
        .iter()
        .flat_map(|&l1| grid.lambda2_values().iter().map(move |&l2| (l1, l2)))
        .collect();
    let entries: Vec<ScoreEntry> = points
        .par_iter()
        .map(|&(lambda1, lambda2)| {
            let run = PenaltyPair::new(lambda1, lambda2).and_then(|pen| {
                semisup_validation_score(data, &folds, &pen, eps_em, eps_inner)
            });
            match run {
                Ok(score) if score.is_finite() => ScoreEntry {
                    lambda1,
                    lambda2,
                    score: Some(score),
                    error: None,
                },
                Ok(score) => ScoreEntry {
                    lambda1,
                    lambda2,
                    score: None,
                    error: Some(format!("non-finite validation score {score}")),
                },
                Err(e) => ScoreEntry {
                    lambda1,
                    lambda2,
                    score: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best = crate::tuning::select_best(&entries)?;
    Ok((best, ScoreTable { entries }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymmetricMatrix;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_semi_data(
        n_l: usize,
        n_u: usize,
        p: usize,
        gap: f64,
        seed: u64,
    ) -> (SemiData, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half_l = n_l / 2;
        let lx = DMatrix::from_fn(n_l, p, |i, _| {
            rng.gen_range(-1.0..1.0) + if i < half_l { 0.0 } else { gap }
        });
        let ly: Vec<usize> = (0..n_l).map(|i| usize::from(i >= half_l)).collect();
        let half_u = n_u / 2;
        let ux = DMatrix::from_fn(n_u, p, |i, _| {
            rng.gen_range(-1.0..1.0) + if i < half_u { 0.0 } else { gap }
        });
        let truth: Vec<usize> = (0..n_u).map(|i| usize::from(i >= half_u)).collect();
        (SemiData::new(lx, ly, ux).unwrap(), truth)
    }

    fn symmetric_two_component_model(p: usize) -> ModelParams {
        ModelParams::new(vec![
            ClassParams {
                pi: 0.5,
                mean: DVector::zeros(p),
                precision: SymmetricMatrix::identity(p),
            },
            ClassParams {
                pi: 0.5,
                mean: DVector::zeros(p),
                precision: SymmetricMatrix::identity(p),
            },
        ])
        .unwrap()
    }

    #[test]
    fn obs_loglik_reduces_to_labeled_terms_without_unlabeled() {
        let (data, _) = toy_semi_data(12, 0, 2, 2.0, 1);
        let model = symmetric_two_component_model(2);
        let ll = obs_loglik(&data, &model).unwrap();
        let mut want = 0.0;
        for (i, &c) in data.labeled_y().iter().enumerate() {
            let x = data.labeled_x().row(i).transpose();
            let cls = &model.classes()[c];
            want += cls.pi.ln()
                + log_density(&x, cls, model.precision_logdet(c), 2);
        }
        assert_abs_diff_eq!(ll, want, epsilon = 1e-12);
    }

    #[test]
    fn obs_loglik_single_class_is_density_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lx = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
        let ux = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
        let data = SemiData::new(lx.clone(), vec![0; 6], ux.clone()).unwrap();
        let model = ModelParams::new(vec![ClassParams {
            pi: 1.0,
            mean: DVector::zeros(2),
            precision: SymmetricMatrix::identity(2),
        }])
        .unwrap();
        let ll = obs_loglik(&data, &model).unwrap();
        let mut want = 0.0;
        for i in 0..6 {
            want += log_density(&lx.row(i).transpose(), &model.classes()[0], 0.0, 2);
        }
        for i in 0..4 {
            want += log_density(&ux.row(i).transpose(), &model.classes()[0], 0.0, 2);
        }
        assert_abs_diff_eq!(ll, want, epsilon = 1e-12);
    }

    #[test]
    fn obs_loglik_matches_density_product_oracle() {
        let (data, _) = toy_semi_data(8, 5, 2, 1.5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stats = crate::estimator::tests::random_stats(2, 2, &mut rng);
        let model = ModelParams::new(vec![
            ClassParams {
                pi: 0.3,
                mean: stats[0].mean().clone(),
                precision: crate::linalg::q_operator(stats[0].cov(), 0.4).unwrap(),
            },
            ClassParams {
                pi: 0.7,
                mean: stats[1].mean().clone(),
                precision: crate::linalg::q_operator(stats[1].cov(), 0.4).unwrap(),
            },
        ])
        .unwrap();
        let ll = obs_loglik(&data, &model).unwrap();

        // direct (non-log) density evaluation
        let density = |x: &DVector<f64>, cls: &ClassParams| -> f64 {
            let det: f64 = crate::linalg::sym_eig(&cls.precision)
                .unwrap()
                .values()
                .iter()
                .product();
            let centered = x - &cls.mean;
            (2.0 * std::f64::consts::PI).powf(-1.0)
                * det.sqrt()
                * (-0.5 * cls.precision.quadratic_form(&centered)).exp()
        };
        let mut want = 0.0;
        for (i, &c) in data.labeled_y().iter().enumerate() {
            let x = data.labeled_x().row(i).transpose();
            want += (model.classes()[c].pi * density(&x, &model.classes()[c])).ln();
        }
        for i in 0..data.n_unlabeled() {
            let x = data.unlabeled_x().row(i).transpose();
            let mix: f64 = model
                .classes()
                .iter()
                .map(|cls| cls.pi * density(&x, cls))
                .sum();
            want += mix.ln();
        }
        assert_abs_diff_eq!(ll, want, epsilon = 1e-9 * (1.0 + want.abs()));
    }

    #[test]
    fn e_step_identical_components_gives_half() {
        let (data, _) = toy_semi_data(8, 6, 2, 0.0, 5);
        let model = symmetric_two_component_model(2);
        let alpha = e_step(&data, &model).unwrap();
        for i in 0..alpha.n_rows() {
            assert_abs_diff_eq!(alpha.alpha()[(i, 0)], 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(alpha.alpha()[(i, 1)], 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn e_step_degenerate_prior_forces_column() {
        let (data, _) = toy_semi_data(8, 6, 2, 1.0, 6);
        let model = ModelParams::new(vec![
            ClassParams {
                pi: 1.0,
                mean: DVector::zeros(2),
                precision: SymmetricMatrix::identity(2),
            },
            ClassParams {
                pi: 0.0,
                mean: DVector::from_element(2, 1.0),
                precision: SymmetricMatrix::identity(2),
            },
        ])
        .unwrap();
        let alpha = e_step(&data, &model).unwrap();
        for i in 0..alpha.n_rows() {
            assert_eq!(alpha.alpha()[(i, 0)], 1.0);
            assert_eq!(alpha.alpha()[(i, 1)], 0.0);
        }
    }

    #[test]
    fn e_step_rows_match_normalized_density_products() {
        let (data, _) = toy_semi_data(8, 10, 2, 1.2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let stats = crate::estimator::tests::random_stats(2, 2, &mut rng);
        let model = ModelParams::new(vec![
            ClassParams {
                pi: 0.4,
                mean: stats[0].mean().clone(),
                precision: crate::linalg::q_operator(stats[0].cov(), 0.5).unwrap(),
            },
            ClassParams {
                pi: 0.6,
                mean: stats[1].mean().clone(),
                precision: crate::linalg::q_operator(stats[1].cov(), 0.5).unwrap(),
            },
        ])
        .unwrap();
        let alpha = e_step(&data, &model).unwrap();
        for i in 0..data.n_unlabeled() {
            let x = data.unlabeled_x().row(i).transpose();
            let mut num = Vec::new();
            for cls in model.classes() {
                let det: f64 = crate::linalg::sym_eig(&cls.precision)
                    .unwrap()
                    .values()
                    .iter()
                    .product();
                let centered = &x - &cls.mean;
                num.push(
                    cls.pi
                        * det.sqrt()
                        * (-0.5 * cls.precision.quadratic_form(&centered)).exp(),
                );
            }
            let total: f64 = num.iter().sum();
            for c in 0..2 {
                assert_abs_diff_eq!(alpha.alpha()[(i, c)], num[c] / total, epsilon = 1e-10);
            }
            let row_sum: f64 = alpha.alpha().row(i).iter().sum();
            assert_abs_diff_eq!(row_sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn moments_without_unlabeled_match_labeled_statistics() {
        let (data, _) = toy_semi_data(10, 0, 2, 2.0, 9);
        let alpha = Responsibilities::empty(2);
        let moments = m_step_moments(&data, &alpha).unwrap();
        let stats = class_stats(data.labeled_x(), data.labeled_y()).unwrap();
        for (m, st) in moments.iter().zip(&stats) {
            assert_abs_diff_eq!(m.n_tilde, st.count(), epsilon = 1e-12);
            assert_abs_diff_eq!(m.pi_tilde, st.count() / 10.0, epsilon = 1e-12);
            assert!((m.mu_tilde.clone() - st.mean()).amax() <= 1e-12);
            assert!(m.s_tilde.sub(st.cov()).max_abs() <= 1e-12);
        }
    }

    #[test]
    fn moments_with_concentrated_mass_count_unlabeled_fully() {
        let (data, _) = toy_semi_data(8, 4, 2, 2.0, 10);
        let mut a = DMatrix::zeros(4, 2);
        for i in 0..4 {
            a[(i, 0)] = 1.0;
        }
        let alpha = Responsibilities::new(a).unwrap();
        let moments = m_step_moments(&data, &alpha).unwrap();
        assert_abs_diff_eq!(moments[0].n_tilde, 4.0 + 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moments[1].n_tilde, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moments[0].alpha_sum, 4.0, epsilon = 1e-12);
        // class-0 mean over labeled members and all unlabeled rows at weight 1
        let mut want = DVector::zeros(2);
        for (i, &c) in data.labeled_y().iter().enumerate() {
            if c == 0 {
                want += data.labeled_x().row(i).transpose();
            }
        }
        for i in 0..4 {
            want += data.unlabeled_x().row(i).transpose();
        }
        want /= 8.0;
        assert!((moments[0].mu_tilde.clone() - want).amax() <= 1e-12);
    }

    #[test]
    fn moments_match_direct_recomputation_and_identity() {
        let (data, _) = toy_semi_data(10, 6, 3, 1.0, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut a = DMatrix::zeros(6, 2);
        for i in 0..6 {
            let u: f64 = rng.gen_range(0.05..0.95);
            a[(i, 0)] = u;
            a[(i, 1)] = 1.0 - u;
        }
        let alpha = Responsibilities::new(a.clone()).unwrap();
        let moments = m_step_moments(&data, &alpha).unwrap();

        let total_pi: f64 = moments.iter().map(|m| m.pi_tilde).sum();
        assert_abs_diff_eq!(total_pi, 1.0, epsilon = 1e-12);
        let total_n: f64 = moments.iter().map(|m| m.n_tilde).sum();
        assert_abs_diff_eq!(total_n, 16.0, epsilon = 1e-12);

        for (c, m) in moments.iter().enumerate() {
            // direct weighted recomputation
            let mut n_tilde = 0.0;
            let mut mu = DVector::zeros(3);
            for (i, &cls) in data.labeled_y().iter().enumerate() {
                if cls == c {
                    n_tilde += 1.0;
                    mu += data.labeled_x().row(i).transpose();
                }
            }
            for i in 0..6 {
                n_tilde += a[(i, c)];
                mu += data.unlabeled_x().row(i).transpose() * a[(i, c)];
            }
            mu /= n_tilde;
            assert_abs_diff_eq!(m.n_tilde, n_tilde, epsilon = 1e-12);
            assert!((m.mu_tilde.clone() - &mu).amax() <= 1e-12);

            // blending identity ñ_c S̃_c = n_c S̃^L + (Σα) S̃^U
            let lhs = m.s_tilde.scale(m.n_tilde);
            let rhs = m
                .s_labeled
                .scale(m.labeled_count)
                .linear_combination(1.0, &m.s_unlabeled, m.alpha_sum);
            assert!(lhs.sub(&rhs).max_abs() <= 1e-10);
        }
    }

    #[test]
    fn m_step_precisions_decouple_at_zero_fusion() {
        let (data, _) = toy_semi_data(10, 6, 2, 1.5, 13);
        let model = symmetric_two_component_model(2);
        let alpha = e_step(&data, &model).unwrap();
        let moments = m_step_moments(&data, &alpha).unwrap();
        let pen = PenaltyPair::new(2.0, 0.0).unwrap();
        let precisions = m_step_precisions(&moments, &pen, 1e-9, None).unwrap();
        for (m, theta) in moments.iter().zip(precisions.thetas()) {
            let direct =
                crate::linalg::q_operator(&m.s_tilde, pen.lambda1() / m.n_tilde).unwrap();
            assert!(theta.sub(&direct).max_abs() <= 1e-8);
        }
    }

    #[test]
    fn m_step_precisions_match_descent_oracle() {
        let (data, _) = toy_semi_data(8, 4, 3, 1.0, 14);
        let model = symmetric_two_component_model(3);
        let alpha = e_step(&data, &model).unwrap();
        let moments = m_step_moments(&data, &alpha).unwrap();
        let pen = PenaltyPair::new(1.0, 0.8).unwrap();
        let precisions = m_step_precisions(&moments, &pen, 1e-9, None).unwrap();

        let stats: Vec<ClassStats> = moments
            .iter()
            .map(|m| ClassStats::new(m.n_tilde, m.mu_tilde.clone(), m.s_tilde.clone()).unwrap())
            .collect();
        let oracle = crate::refsolve::min_joint_objective(&stats, &pen, 1e-8, 2_000_000).unwrap();
        let ours =
            crate::estimator::objective(&precisions, &stats, &pen).unwrap();
        let reference = crate::estimator::objective(
            &PrecisionSet::new(oracle).unwrap(),
            &stats,
            &pen,
        )
        .unwrap();
        assert!((ours - reference).abs() <= 1e-5 * (1.0 + reference.abs()));
    }

    #[test]
    fn all_equal_moments_give_equal_precisions() {
        let cov = SymmetricMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 0.2 }).unwrap();
        let m = ClassMoments {
            n_tilde: 9.0,
            pi_tilde: 0.5,
            mu_tilde: DVector::zeros(2),
            s_tilde: cov.clone(),
            s_labeled: cov.clone(),
            s_unlabeled: SymmetricMatrix::zeros(2),
            labeled_count: 9.0,
            alpha_sum: 0.0,
        };
        let moments = vec![m.clone(), m];
        let pen = PenaltyPair::new(1.0, 2.0).unwrap();
        let precisions = m_step_precisions(&moments, &pen, 1e-8, None).unwrap();
        assert!(precisions.thetas()[0]
            .sub(&precisions.thetas()[1])
            .max_abs()
            <= 1e-10);
    }

    #[test]
    fn fit_em_without_unlabeled_equals_supervised_fit() {
        let (data, _) = toy_semi_data(14, 0, 2, 2.0, 15);
        let pen = PenaltyPair::new(1.0, 0.5).unwrap();
        let report = fit_em(&data, &pen, DEFAULT_EPS_EM, 1e-8).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.converged);

        let stats = class_stats(data.labeled_x(), data.labeled_y()).unwrap();
        let supervised = fit(&stats, &pen, None, 1e-8).unwrap();
        for (a, b) in report
            .params
            .classes()
            .iter()
            .zip(supervised.precisions.thetas())
        {
            assert_eq!(a.precision.sub(b).max_abs(), 0.0);
        }
    }

    #[test]
    fn fit_em_concentrates_on_well_separated_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let n_per = 10;
        let lx = DMatrix::from_fn(2 * n_per, 2, |i, _| {
            rng.gen_range(-0.5..0.5) + if i < n_per { 0.0 } else { 8.0 }
        });
        let ly: Vec<usize> = (0..2 * n_per).map(|i| usize::from(i >= n_per)).collect();
        let data = SemiData::new(lx.clone(), ly.clone(), lx.clone()).unwrap();
        let pen = PenaltyPair::new(0.5, 0.1).unwrap();
        let report = fit_em(&data, &pen, DEFAULT_EPS_EM, 1e-8).unwrap();
        for (i, &c) in ly.iter().enumerate() {
            assert!(
                report.responsibilities.alpha()[(i, c)] >= 0.99,
                "row {i} alpha {}",
                report.responsibilities.alpha()[(i, c)]
            );
        }
    }

    #[test]
    fn fit_em_trace_is_non_decreasing_and_rows_sum_to_one() {
        let (data, _) = toy_semi_data(16, 20, 3, 1.2, 17);
        let pen = PenaltyPair::new(1.0, 1.0).unwrap();
        let report = fit_em(&data, &pen, DEFAULT_EPS_EM, 1e-8).unwrap();
        for w in report.penalized_loglik_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-8 * (1.0 + w[0].abs()),
                "EM descent step: {} -> {}",
                w[0],
                w[1]
            );
        }
        for i in 0..report.responsibilities.n_rows() {
            let s: f64 = report.responsibilities.alpha().row(i).iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn validation_score_decomposes_with_fixed_parameters() {
        let (data, _) = toy_semi_data(12, 8, 2, 1.5, 18);
        let folds = semisup_folds(&data, 2, 3).unwrap();
        let model = symmetric_two_component_model(2);
        // With Ψ̂ held fixed, the per-fold held-out terms add up to the full
        // negative log-likelihood.
        let mut total = 0.0;
        for v in 0..2 {
            let heldout = data
                .subset(
                    &folds.labeled().heldout_indices(v),
                    &folds.unlabeled().heldout_indices(v),
                )
                .unwrap();
            total += neg_obs_loglik(&heldout, &model).unwrap();
        }
        let whole = neg_obs_loglik(&data, &model).unwrap();
        assert_abs_diff_eq!(total, whole, epsilon = 1e-9 * (1.0 + whole.abs()));
    }

    #[test]
    fn validation_score_sums_per_fold_terms() {
        let (data, _) = toy_semi_data(12, 6, 2, 1.5, 19);
        let folds = semisup_folds(&data, 2, 5).unwrap();
        let pen = PenaltyPair::new(1.0, 0.5).unwrap();
        let total = semisup_validation_score(&data, &folds, &pen, 1e-5, 1e-7).unwrap();
        let mut want = 0.0;
        for v in 0..2 {
            let fitted = fit_em(
                &data
                    .subset(
                        &folds.labeled().training_indices(v),
                        &folds.unlabeled().training_indices(v),
                    )
                    .unwrap(),
                &pen,
                1e-5,
                1e-7,
            )
            .unwrap();
            let heldout = data
                .subset(
                    &folds.labeled().heldout_indices(v),
                    &folds.unlabeled().heldout_indices(v),
                )
                .unwrap();
            want += neg_obs_loglik(&heldout, &fitted.params).unwrap();
        }
        assert_abs_diff_eq!(total, want, epsilon = 1e-9 * (1.0 + want.abs()));
    }

    #[test]
    fn semisup_grid_search_single_point_and_tie() {
        let (data, _) = toy_semi_data(12, 6, 2, 1.5, 20);
        let grid = GridSpec::new(vec![0.5], vec![1.0]).unwrap();
        let (best, table) = semisup_grid_search(&data, &grid, 2, 7, 1e-5, 1e-7).unwrap();
        assert_eq!(best.lambda1(), 0.5);
        assert_eq!(best.lambda2(), 1.0);
        assert_eq!(table.entries.len(), 1);
    }
}
