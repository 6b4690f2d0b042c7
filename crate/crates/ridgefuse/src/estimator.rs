//! Joint ridge-fusion precision estimation.
//!
//! For class sample covariances `S_1..S_C` with weights `n_1..n_C`, the
//! estimator minimizes
//!
//! ```text
//! Σ_c n_c { tr(S_c Θ_c) − log det Θ_c }
//!   + (λ1/2) Σ_c |Θ_c|₂²
//!   + (λ2/4) Σ_{(c,m)} |Θ_c − Θ_m|₂²
//! ```
//!
//! over positive definite `Θ_1..Θ_C` by blockwise coordinate descent. Each
//! block update is a single ridge proximal evaluation `Q(S̃_c, λ̃_c)` with
//!
//! ```text
//! S̃_c = S_c − (λ2/n_c) Σ_{m≠c} Θ_m        λ̃_c = (λ1 + λ2(C−1)) / n_c
//! ```
//!
//! Class weights are positive reals rather than integers so the same solver
//! serves the EM M-step, where effective sample sizes are fractional.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{q_operator, sym_eig, SymmetricMatrix};

/// Default relative tolerance for the solver's stopping rule.
pub const DEFAULT_EPS: f64 = 1e-7;

/// Sweep cap; exceeding it yields [`Error::FitNotConverged`] carrying the
/// partial result.
pub const MAX_SWEEPS: usize = 10_000;

/// Per-class sufficient statistics: weight, sample mean, and sample
/// covariance (divisor `n_c`).
#[derive(Debug, Clone)]
pub struct ClassStats {
    count: f64,
    mean: DVector<f64>,
    cov: SymmetricMatrix,
}

impl ClassStats {
    /// Validating constructor: the weight must be positive and the
    /// covariance positive semidefinite (smallest eigenvalue ≥ −1e-10).
    pub fn new(count: f64, mean: DVector<f64>, cov: SymmetricMatrix) -> Result<Self> {
        if !count.is_finite() || count <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "class weight must be positive and finite, got {count}"
            )));
        }
        if mean.len() != cov.dim() {
            return Err(Error::InvalidInput(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("mean contains non-finite entries".into()));
        }
        let min_eig = sym_eig(&cov)?.values().min();
        if min_eig < -1e-10 {
            return Err(Error::InvalidInput(format!(
                "covariance is not positive semidefinite (smallest eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(Self { count, mean, cov })
    }

    /// Constructor for covariances that are positive semidefinite by
    /// construction (weighted sums of outer products).
    pub(crate) fn new_unchecked(count: f64, mean: DVector<f64>, cov: SymmetricMatrix) -> Self {
        debug_assert!(count > 0.0 && mean.len() == cov.dim());
        Self { count, mean, cov }
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SymmetricMatrix {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }
}

/// Per-class weight, mean, and covariance of `(x, y)` data with labels in
/// `0..n_classes`. Covariances use divisor `n_c` and are centered at the
/// class mean.
pub fn class_stats(x: &DMatrix<f64>, y: &[usize]) -> Result<Vec<ClassStats>> {
    let (n, p) = (x.nrows(), x.ncols());
    if p == 0 {
        return Err(Error::InvalidInput("data has zero columns".into()));
    }
    if y.len() != n || n == 0 {
        return Err(Error::InvalidInput(format!(
            "label vector has length {} for {} rows",
            y.len(),
            n
        )));
    }
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        members[c].push(i);
    }
    let mut out = Vec::with_capacity(n_classes);
    for (c, rows) in members.iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::MissingClass { class: c });
        }
        let n_c = rows.len() as f64;
        let mut mean = DVector::zeros(p);
        for &i in rows {
            mean += x.row(i).transpose();
        }
        mean /= n_c;
        let mut centered = DMatrix::zeros(rows.len(), p);
        for (k, &i) in rows.iter().enumerate() {
            centered.set_row(k, &(x.row(i) - mean.transpose()));
        }
        let cov = SymmetricMatrix::symmetrized(centered.transpose() * &centered / n_c)?;
        out.push(ClassStats::new(n_c, mean, cov)?);
    }
    Ok(out)
}

/// The tuning-parameter pair `(λ1, λ2)`. `λ2 = +∞` is the explicit
/// infinite-fusion sentinel that constrains all precisions to be equal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyPair {
    lambda1: f64,
    lambda2: f64,
}

impl PenaltyPair {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !lambda1.is_finite() || lambda1 < 0.0 {
            return Err(Error::InvalidInput(format!(
                "lambda1 must be finite and non-negative, got {lambda1}"
            )));
        }
        if lambda2.is_nan() || lambda2 < 0.0 {
            return Err(Error::InvalidInput(format!(
                "lambda2 must be non-negative (possibly +inf), got {lambda2}"
            )));
        }
        Ok(Self { lambda1, lambda2 })
    }

    /// The infinite-fusion sentinel at a given ridge level.
    pub fn infinite_fusion(lambda1: f64) -> Result<Self> {
        Self::new(lambda1, f64::INFINITY)
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn lambda2_is_infinite(&self) -> bool {
        self.lambda2.is_infinite()
    }
}

impl std::fmt::Display for PenaltyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.lambda2_is_infinite() {
            write!(f, "(lambda1={}, lambda2=inf)", self.lambda1)
        } else {
            write!(f, "(lambda1={}, lambda2={})", self.lambda1, self.lambda2)
        }
    }
}

/// One positive definite precision matrix per class, common dimension.
#[derive(Debug, Clone)]
pub struct PrecisionSet {
    thetas: Vec<SymmetricMatrix>,
}

impl PrecisionSet {
    pub fn new(thetas: Vec<SymmetricMatrix>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::InvalidInput("precision set is empty".into()));
        }
        let p = thetas[0].dim();
        for (c, theta) in thetas.iter().enumerate() {
            if theta.dim() != p {
                return Err(Error::InvalidInput(format!(
                    "precision {c} has dimension {} but expected {p}",
                    theta.dim()
                )));
            }
            if !theta.is_positive_definite() {
                return Err(Error::PositiveDefiniteRequired {
                    context: "precision set entry",
                });
            }
        }
        Ok(Self { thetas })
    }

    pub fn n_classes(&self) -> usize {
        self.thetas.len()
    }

    pub fn dim(&self) -> usize {
        self.thetas[0].dim()
    }

    pub fn thetas(&self) -> &[SymmetricMatrix] {
        &self.thetas
    }

    pub fn into_thetas(self) -> Vec<SymmetricMatrix> {
        self.thetas
    }

    /// Fusion gap `Σ_{c<m} |Θ_c − Θ_m|₂²`.
    pub fn fusion_gap(&self) -> f64 {
        let c = self.thetas.len();
        let mut gap = 0.0;
        for a in 0..c {
            for b in (a + 1)..c {
                gap += self.thetas[a].sub(&self.thetas[b]).frob_sq();
            }
        }
        gap
    }
}

/// Result of a blockwise coordinate descent run.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub precisions: PrecisionSet,
    /// Number of full sweeps performed.
    pub iterations: usize,
    pub final_objective: f64,
    pub converged: bool,
    /// Objective after initialization and after every sweep; non-increasing.
    pub objective_trace: Vec<f64>,
}

/// Penalized negative profile log-likelihood (the solver's objective).
/// Requires a finite fusion penalty; on the infinite-fusion constraint set
/// the fusion term is identically zero.
pub fn objective(thetas: &PrecisionSet, stats: &[ClassStats], pen: &PenaltyPair) -> Result<f64> {
    if pen.lambda2_is_infinite() {
        return Err(Error::InvalidInput(
            "objective is undefined for the infinite-fusion sentinel; use lambda2=0 on the constrained set".into(),
        ));
    }
    if thetas.n_classes() != stats.len() {
        return Err(Error::InvalidInput(format!(
            "{} precisions for {} classes",
            thetas.n_classes(),
            stats.len()
        )));
    }
    let mut f = 0.0;
    for (theta, st) in thetas.thetas().iter().zip(stats) {
        let ld = crate::linalg::logdet(theta)?;
        f += st.count() * (st.cov().trace_product(theta) - ld);
        f += 0.5 * pen.lambda1() * theta.frob_sq();
    }
    // Ordered-pair fusion sum = twice the c<m sum.
    f += 0.5 * pen.lambda2() * thetas.fusion_gap();
    Ok(f)
}

/// Effective covariance target for one block update:
/// `S̃_c = S_c − (λ2/n_c) Σ_{m≠c} Θ_m`. May be indefinite, which the ridge
/// proximal operator accepts.
pub fn s_twiddle(
    stats_c: &ClassStats,
    others: &[SymmetricMatrix],
    lambda2: f64,
) -> SymmetricMatrix {
    let mut acc = stats_c.cov().clone();
    if lambda2 == 0.0 || others.is_empty() {
        return acc;
    }
    let w = lambda2 / stats_c.count();
    for theta in others {
        acc = acc.linear_combination(1.0, theta, -w);
    }
    acc
}

/// Effective ridge level for one block update:
/// `λ̃_c = (λ1 + λ2(C−1)) / n_c`.
pub fn lambda_twiddle(pen: &PenaltyPair, n_classes: usize, count: f64) -> f64 {
    let fusion = if n_classes > 1 {
        pen.lambda2() * (n_classes - 1) as f64
    } else {
        0.0
    };
    (pen.lambda1() + fusion) / count
}

/// Closed-form solution of the infinite-fusion edge case: every class gets
/// `Q((1/n) Σ n_c S_c, λ1 C / n)`.
pub fn fit_edge_case(stats: &[ClassStats], lambda1: f64) -> Result<PrecisionSet> {
    if stats.is_empty() {
        return Err(Error::InvalidInput("no class statistics supplied".into()));
    }
    if !lambda1.is_finite() || lambda1 <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "edge case requires lambda1 > 0, got {lambda1}"
        )));
    }
    let n: f64 = stats.iter().map(ClassStats::count).sum();
    let mut pooled = SymmetricMatrix::zeros(stats[0].dim());
    for st in stats {
        pooled = pooled.linear_combination(1.0, st.cov(), st.count() / n);
    }
    let c = stats.len() as f64;
    let shared = q_operator(&pooled, lambda1 * c / n)?;
    PrecisionSet::new(vec![shared; stats.len()])
}

/// Starting point for the solver: the edge-case estimate when the fusion
/// penalty dominates (`λ2 ≥ λ1`, ties included), otherwise the decoupled
/// `λ2 = 0` solution.
pub fn init_strategy(stats: &[ClassStats], pen: &PenaltyPair) -> Result<PrecisionSet> {
    if pen.lambda2() >= pen.lambda1() {
        fit_edge_case(stats, pen.lambda1())
    } else {
        let thetas = stats
            .iter()
            .map(|st| q_operator(st.cov(), pen.lambda1() / st.count()))
            .collect::<Result<Vec<_>>>()?;
        PrecisionSet::new(thetas)
    }
}

fn validate_fit_inputs(stats: &[ClassStats], pen: &PenaltyPair) -> Result<()> {
    if stats.is_empty() {
        return Err(Error::InvalidInput("no class statistics supplied".into()));
    }
    let p = stats[0].dim();
    if stats.iter().any(|st| st.dim() != p) {
        return Err(Error::InvalidInput(
            "class covariances have mismatched dimensions".into(),
        ));
    }
    if pen.lambda1() <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "the solver requires lambda1 > 0 for a unique minimizer, got {}",
            pen.lambda1()
        )));
    }
    for (c, st) in stats.iter().enumerate() {
        for (var, &d) in st.cov().diagonal().iter().enumerate() {
            if d <= 0.0 {
                return Err(Error::DegenerateVariable { class: c, var });
            }
        }
    }
    Ok(())
}

/// Blockwise coordinate descent for the joint ridge-fusion estimator.
///
/// Sweeps the classes in fixed order, setting each block to
/// `Q(S̃_c, λ̃_c)`, and stops once the summed entrywise movement of a full
/// sweep drops below `eps · Σ_c |(S_c ∘ I)⁻¹|₁`. With `init = None` the
/// starting point comes from [`init_strategy`]; any custom start (for
/// example a warm start from a neighboring penalty) reaches the same
/// minimizer because the objective is strictly convex.
pub fn fit(
    stats: &[ClassStats],
    pen: &PenaltyPair,
    init: Option<&PrecisionSet>,
    eps: f64,
) -> Result<FitReport> {
    validate_fit_inputs(stats, pen)?;
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "convergence tolerance must be positive, got {eps}"
        )));
    }

    if pen.lambda2_is_infinite() {
        let precisions = fit_edge_case(stats, pen.lambda1())?;
        // The fusion term vanishes on the constraint set Θ_1 = … = Θ_C.
        let ridge_only = PenaltyPair::new(pen.lambda1(), 0.0)?;
        let obj = objective(&precisions, stats, &ridge_only)?;
        return Ok(FitReport {
            precisions,
            iterations: 0,
            final_objective: obj,
            converged: true,
            objective_trace: vec![obj],
        });
    }

    let c_count = stats.len();
    let movement_scale: f64 = stats
        .iter()
        .map(|st| st.cov().diagonal().iter().map(|d| 1.0 / d).sum::<f64>())
        .sum();
    let threshold = eps * movement_scale;

    let mut thetas: Vec<SymmetricMatrix> = match init {
        Some(ps) => {
            if ps.n_classes() != c_count || ps.dim() != stats[0].dim() {
                return Err(Error::InvalidInput(
                    "initial precision set does not match the class statistics".into(),
                ));
            }
            ps.thetas().to_vec()
        }
        None => init_strategy(stats, pen)?.into_thetas(),
    };
    let lambda_tildes: Vec<f64> = stats
        .iter()
        .map(|st| lambda_twiddle(pen, c_count, st.count()))
        .collect();

    let mut trace = Vec::with_capacity(32);
    trace.push(objective(&PrecisionSet { thetas: thetas.clone() }, stats, pen)?);

    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut theta_sum = SymmetricMatrix::zeros(stats[0].dim());
        for theta in &thetas {
            theta_sum = theta_sum.add(theta);
        }
        let mut movement = 0.0;
        for c in 0..c_count {
            let others_sum = theta_sum.sub(&thetas[c]);
            let s_tilde = if c_count > 1 {
                stats[c]
                    .cov()
                    .linear_combination(1.0, &others_sum, -pen.lambda2() / stats[c].count())
            } else {
                stats[c].cov().clone()
            };
            let updated = q_operator(&s_tilde, lambda_tildes[c])?;
            movement += updated.sub(&thetas[c]).entrywise_l1();
            theta_sum = theta_sum.sub(&thetas[c]).add(&updated);
            thetas[c] = updated;
        }
        trace.push(objective(&PrecisionSet { thetas: thetas.clone() }, stats, pen)?);
        if movement < threshold {
            converged = true;
            break;
        }
    }

    let report = FitReport {
        final_objective: *trace.last().expect("trace is non-empty"),
        precisions: PrecisionSet::new(thetas)?,
        iterations: sweeps,
        converged,
        objective_trace: trace,
    };
    if converged {
        Ok(report)
    } else {
        Err(Error::FitNotConverged {
            report: Box::new(report),
        })
    }
}

/// Column centering/scaling transform for the documented scale-invariance
/// recipe: standardize, fit, then rescale precision entries by the
/// reciprocal scale products.
#[derive(Debug, Clone)]
pub struct Standardization {
    center: DVector<f64>,
    scale: DVector<f64>,
}

impl Standardization {
    /// Column means and standard deviations (divisor `n`).
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        if n == 0 || p == 0 {
            return Err(Error::InvalidInput("cannot standardize empty data".into()));
        }
        let mut center = DVector::zeros(p);
        for i in 0..n {
            center += x.row(i).transpose();
        }
        center /= n as f64;
        let mut scale = DVector::zeros(p);
        for j in 0..p {
            let var = x
                .column(j)
                .iter()
                .map(|v| (v - center[j]) * (v - center[j]))
                .sum::<f64>()
                / n as f64;
            scale[j] = var.sqrt();
            if scale[j] <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "variable {j} has zero variance and cannot be standardized"
                )));
            }
        }
        Ok(Self { center, scale })
    }

    pub fn from_parts(center: DVector<f64>, scale: DVector<f64>) -> Result<Self> {
        if center.len() != scale.len() || scale.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidInput("invalid standardization parameters".into()));
        }
        Ok(Self { center, scale })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn scale(&self) -> &DVector<f64> {
        &self.scale
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.center[j]) / self.scale[j]
        })
    }

    pub fn apply_point(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |j, _| (x[j] - self.center[j]) / self.scale[j])
    }

    /// Maps a precision fitted on standardized data back to the raw scale:
    /// `θ_ij / (s_i s_j)`.
    pub fn rescale_precision(&self, theta: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        let p = theta.dim();
        SymmetricMatrix::from_fn(p, |i, j| theta.get(i, j) / (self.scale[i] * self.scale[j]))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_stats(
        c_count: usize,
        p: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<ClassStats> {
        (0..c_count)
            .map(|_| {
                let a = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
                let cov = SymmetricMatrix::symmetrized(
                    &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5,
                )
                .unwrap();
                let mean = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
                ClassStats::new(rng.gen_range(5..40) as f64, mean, cov).unwrap()
            })
            .collect()
    }

    #[test]
    fn class_stats_two_points() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 2.0]);
        let stats = class_stats(&x, &[0, 0]).unwrap();
        assert_eq!(stats.len(), 1);
        assert_abs_diff_eq!(stats[0].mean()[0], 1.0);
        assert_abs_diff_eq!(stats[0].mean()[1], 1.0);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(stats[0].cov().get(i, j), 1.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn class_stats_single_point_has_zero_cov() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 4.0]);
        let stats = class_stats(&x, &[0, 1]).unwrap();
        for st in &stats {
            assert_eq!(st.cov().max_abs(), 0.0);
            assert_eq!(st.count(), 1.0);
        }
    }

    #[test]
    fn class_stats_rejects_missing_class() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(matches!(
            class_stats(&x, &[0, 2]),
            Err(Error::MissingClass { class: 1 })
        ));
        assert!(class_stats(&DMatrix::<f64>::zeros(2, 0), &[0, 0]).is_err());
    }

    #[test]
    fn class_stats_monte_carlo_sanity() {
        let sigma = SymmetricMatrix::from_fn(4, |i, j| if i == j { 1.0 } else { 0.3 }).unwrap();
        let mu = DVector::from_element(4, 0.5);
        let x = crate::sim::sample_gaussian(1000, &mu, &sigma, 99).unwrap();
        let stats = class_stats(&x, &vec![0; 1000]).unwrap();
        assert!(stats[0].cov().sub(&sigma).max_abs() <= 0.15);
    }

    #[test]
    fn objective_trivial_cases() {
        let p = 3;
        let stats = vec![ClassStats::new(
            7.0,
            DVector::zeros(p),
            SymmetricMatrix::identity(p),
        )
        .unwrap()];
        let thetas = PrecisionSet::new(vec![SymmetricMatrix::identity(p)]).unwrap();
        let pen = PenaltyPair::new(0.0, 0.0).unwrap();
        // tr = p, logdet = 0, penalties 0 → n·p
        assert_abs_diff_eq!(
            objective(&thetas, &stats, &pen).unwrap(),
            7.0 * p as f64,
            epsilon = 1e-12
        );

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stats2 = random_stats(2, 3, &mut rng);
        let shared = q_operator(stats2[0].cov(), 0.5).unwrap();
        let equal = PrecisionSet::new(vec![shared.clone(), shared]).unwrap();
        let with_fusion = PenaltyPair::new(1.0, 5.0).unwrap();
        let without = PenaltyPair::new(1.0, 0.0).unwrap();
        assert_abs_diff_eq!(
            objective(&equal, &stats2, &with_fusion).unwrap(),
            objective(&equal, &stats2, &without).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn objective_matches_symbol_by_symbol_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stats = random_stats(3, 4, &mut rng);
        let pen = PenaltyPair::new(0.7, 1.3).unwrap();
        let thetas: Vec<SymmetricMatrix> = stats
            .iter()
            .map(|st| q_operator(st.cov(), 0.2).unwrap())
            .collect();
        let ps = PrecisionSet::new(thetas.clone()).unwrap();

        // Independent evaluation, term by term.
        let mut want = 0.0;
        for (st, theta) in stats.iter().zip(&thetas) {
            let mut tr = 0.0;
            let p = theta.dim();
            for i in 0..p {
                for j in 0..p {
                    tr += st.cov().get(i, j) * theta.get(j, i);
                }
            }
            let ld: f64 = sym_eig(theta).unwrap().values().iter().map(|v| v.ln()).sum();
            want += st.count() * (tr - ld);
            want += 0.5 * pen.lambda1() * theta.frob_sq();
        }
        for a in 0..3 {
            for b in 0..3 {
                want += 0.25 * pen.lambda2() * thetas[a].sub(&thetas[b]).frob_sq();
            }
        }
        let got = objective(&ps, &stats, &pen).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-8 * (1.0 + want.abs()));
    }

    #[test]
    fn s_twiddle_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stats = random_stats(3, 3, &mut rng);

        let unchanged = s_twiddle(&stats[0], &[stats[1].cov().clone()], 0.0);
        assert_eq!(unchanged.sub(stats[0].cov()).max_abs(), 0.0);

        let st = ClassStats::new(4.0, DVector::zeros(2), SymmetricMatrix::identity(2)).unwrap();
        let zeroed = s_twiddle(&st, &[SymmetricMatrix::identity(2)], 4.0);
        assert_eq!(zeroed.max_abs(), 0.0);

        let others = [stats[1].cov().clone(), stats[2].cov().clone()];
        let got = s_twiddle(&stats[0], &others, 1.7);
        let w = 1.7 / stats[0].count();
        for i in 0..3 {
            for j in 0..3 {
                let want =
                    stats[0].cov().get(i, j) - w * (others[0].get(i, j) + others[1].get(i, j));
                assert_abs_diff_eq!(got.get(i, j), want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn lambda_twiddle_cases() {
        let pen = PenaltyPair::new(1.0, 2.0).unwrap();
        assert_abs_diff_eq!(lambda_twiddle(&pen, 3, 10.0), 0.5);
        let decoupled = PenaltyPair::new(3.0, 0.0).unwrap();
        assert_abs_diff_eq!(lambda_twiddle(&decoupled, 4, 6.0), 0.5);
        let zero = PenaltyPair::new(0.0, 0.0).unwrap();
        assert_abs_diff_eq!(lambda_twiddle(&zero, 2, 5.0), 0.0);
    }

    #[test]
    fn fit_decouples_at_zero_fusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stats = random_stats(3, 4, &mut rng);
        let pen = PenaltyPair::new(2.5, 0.0).unwrap();
        let report = fit(&stats, &pen, None, DEFAULT_EPS).unwrap();
        for (st, theta) in stats.iter().zip(report.precisions.thetas()) {
            let direct = q_operator(st.cov(), pen.lambda1() / st.count()).unwrap();
            assert!(theta.sub(&direct).max_abs() <= 1e-8);
        }
    }

    #[test]
    fn fit_symmetric_problem_gives_equal_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shared = random_stats(1, 3, &mut rng).remove(0);
        let stats = vec![shared.clone(), shared];
        let pen = PenaltyPair::new(1.0, 3.0).unwrap();
        let report = fit(&stats, &pen, None, DEFAULT_EPS).unwrap();
        let diff = report.precisions.thetas()[0]
            .sub(&report.precisions.thetas()[1])
            .max_abs();
        assert!(diff <= 1e-9);
    }

    #[test]
    fn fit_matches_generic_descent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stats = random_stats(2, 3, &mut rng);
        let pen = PenaltyPair::new(1.0, 1.0).unwrap();
        let report = fit(&stats, &pen, None, 1e-9).unwrap();
        let oracle = crate::refsolve::min_joint_objective(&stats, &pen, 1e-8, 2_000_000).unwrap();
        let oracle_obj = objective(&PrecisionSet::new(oracle).unwrap(), &stats, &pen).unwrap();
        assert!((report.final_objective - oracle_obj).abs() <= 1e-5);
    }

    #[test]
    fn fit_objective_trace_monotone_and_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stats = random_stats(3, 5, &mut rng);
        let pen = PenaltyPair::new(0.8, 2.0).unwrap();
        let report = fit(&stats, &pen, None, DEFAULT_EPS).unwrap();
        for w in report.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs()));
        }
        // Eq. 6-style per-block stationarity in the scaled system.
        let c_count = stats.len();
        for c in 0..c_count {
            let others: Vec<SymmetricMatrix> = (0..c_count)
                .filter(|&m| m != c)
                .map(|m| report.precisions.thetas()[m].clone())
                .collect();
            let s_t = s_twiddle(&stats[c], &others, pen.lambda2());
            let l_t = lambda_twiddle(&pen, c_count, stats[c].count());
            let theta = &report.precisions.thetas()[c];
            let resid = s_t
                .sub(&theta.inverse_pd("test").unwrap())
                .add(&theta.scale(l_t));
            assert!(
                resid.max_abs() <= 1e-6 * (1.0 + stats[c].cov().max_abs()),
                "residual {}",
                resid.max_abs()
            );
        }
    }

    #[test]
    fn fit_is_initialization_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let stats = random_stats(3, 4, &mut rng);
        let pen = PenaltyPair::new(1.2, 0.4).unwrap();
        let from_decoupled = {
            let init = {
                let thetas = stats
                    .iter()
                    .map(|st| q_operator(st.cov(), pen.lambda1() / st.count()).unwrap())
                    .collect();
                PrecisionSet::new(thetas).unwrap()
            };
            fit(&stats, &pen, Some(&init), 1e-9).unwrap()
        };
        let from_edge = {
            let init = fit_edge_case(&stats, pen.lambda1()).unwrap();
            fit(&stats, &pen, Some(&init), 1e-9).unwrap()
        };
        for (a, b) in from_decoupled
            .precisions
            .thetas()
            .iter()
            .zip(from_edge.precisions.thetas())
        {
            assert!(a.sub(b).frob_sq().sqrt() <= 1e-5);
        }
    }

    #[test]
    fn fusion_gap_shrinks_with_lambda2() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let stats = random_stats(3, 4, &mut rng);
        let mut prev = f64::INFINITY;
        for &l2 in &[0.0, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8] {
            let pen = PenaltyPair::new(1.0, l2).unwrap();
            let report = fit(&stats, &pen, None, DEFAULT_EPS).unwrap();
            let gap = report.precisions.fusion_gap();
            assert!(gap <= prev + 1e-9 * (1.0 + prev.abs()), "gap {gap} > {prev} at lambda2={l2}");
            prev = gap;
        }
    }

    #[test]
    fn fit_large_fusion_approaches_edge_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let stats = random_stats(3, 4, &mut rng);
        let pen = PenaltyPair::new(1.0, 1e8).unwrap();
        let report = fit(&stats, &pen, None, DEFAULT_EPS).unwrap();
        let edge = fit_edge_case(&stats, 1.0).unwrap();
        for (a, b) in report.precisions.thetas().iter().zip(edge.thetas()) {
            assert!(a.sub(b).frob_sq().sqrt() <= 1e-3);
        }
    }

    #[test]
    fn fit_infinite_sentinel_uses_edge_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let stats = random_stats(2, 3, &mut rng);
        let pen = PenaltyPair::infinite_fusion(0.9).unwrap();
        let report = fit(&stats, &pen, None, DEFAULT_EPS).unwrap();
        let edge = fit_edge_case(&stats, 0.9).unwrap();
        for (a, b) in report.precisions.thetas().iter().zip(edge.thetas()) {
            assert_eq!(a.sub(b).max_abs(), 0.0);
        }
        assert!(report.converged);
    }

    #[test]
    fn edge_case_single_class_reduces_to_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let stats = random_stats(1, 3, &mut rng);
        let edge = fit_edge_case(&stats, 2.0).unwrap();
        let direct = q_operator(stats[0].cov(), 2.0 / stats[0].count()).unwrap();
        assert!(edge.thetas()[0].sub(&direct).max_abs() <= 1e-12);
    }

    #[test]
    fn edge_case_equal_identity_stats() {
        let st = ClassStats::new(10.0, DVector::zeros(3), SymmetricMatrix::identity(3)).unwrap();
        let stats = vec![st.clone(), st.clone(), st];
        let edge = fit_edge_case(&stats, 3.0).unwrap();
        let direct = q_operator(&SymmetricMatrix::identity(3), 3.0 * 3.0 / 30.0).unwrap();
        for theta in edge.thetas() {
            assert!(theta.sub(&direct).max_abs() <= 1e-12);
        }
    }

    #[test]
    fn init_strategy_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let stats = random_stats(2, 3, &mut rng);

        let decoupled = init_strategy(&stats, &PenaltyPair::new(1.0, 0.0).unwrap()).unwrap();
        let direct = q_operator(stats[0].cov(), 1.0 / stats[0].count()).unwrap();
        assert!(decoupled.thetas()[0].sub(&direct).max_abs() <= 1e-12);

        let edge_like = init_strategy(&stats, &PenaltyPair::new(1.0, 1e9).unwrap()).unwrap();
        let edge = fit_edge_case(&stats, 1.0).unwrap();
        assert!(edge_like.thetas()[0].sub(&edge.thetas()[0]).max_abs() <= 1e-12);

        // Tie goes to the edge-case branch.
        let tie = init_strategy(&stats, &PenaltyPair::new(1.0, 1.0).unwrap()).unwrap();
        assert!(tie.thetas()[0].sub(&edge.thetas()[0]).max_abs() <= 1e-12);
    }

    #[test]
    fn fit_rejects_degenerate_diagonal() {
        let cov = SymmetricMatrix::from_fn(2, |i, j| {
            if i == 1 && j == 1 {
                0.0
            } else if i == j {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let stats = vec![ClassStats::new(5.0, DVector::zeros(2), cov).unwrap()];
        let pen = PenaltyPair::new(1.0, 0.0).unwrap();
        assert!(matches!(
            fit(&stats, &pen, None, DEFAULT_EPS),
            Err(Error::DegenerateVariable { class: 0, var: 1 })
        ));
    }

    #[test]
    fn standardization_recipe_is_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 30;
        let p = 3;
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-2.0..2.0));
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        // Power-of-two column scalings keep the arithmetic exact.
        let alphas = [4.0, 0.5, 8.0];
        let x_scaled = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * alphas[j]);

        let run = |data: &DMatrix<f64>| {
            let std = Standardization::fit(data).unwrap();
            let z = std.apply(data);
            let stats = class_stats(&z, &y).unwrap();
            let pen = PenaltyPair::new(1.0, 0.5).unwrap();
            let report = fit(&stats, &pen, None, 1e-9).unwrap();
            (std, report)
        };
        let (std_raw, fit_raw) = run(&x);
        let (std_scaled, fit_scaled) = run(&x_scaled);

        // Identical standardized-space estimates, bit for bit.
        for (a, b) in fit_raw
            .precisions
            .thetas()
            .iter()
            .zip(fit_scaled.precisions.thetas())
        {
            assert_eq!(a.sub(b).max_abs(), 0.0);
        }
        // Rescaled estimates transform exactly by the reciprocal scale products.
        for (a, b) in fit_raw
            .precisions
            .thetas()
            .iter()
            .zip(fit_scaled.precisions.thetas())
        {
            let raw = std_raw.rescale_precision(a).unwrap();
            let scaled = std_scaled.rescale_precision(b).unwrap();
            for i in 0..p {
                for j in 0..p {
                    assert_eq!(scaled.get(i, j) * alphas[i] * alphas[j], raw.get(i, j));
                }
            }
        }
    }
}
