//! Dense symmetric-matrix primitives and the ridge proximal operator.
//!
//! [`SymmetricMatrix`] stores a full dense matrix but guarantees exact
//! symmetry and finiteness by construction. [`q_operator`] evaluates
//!
//! ```text
//! Q(S, λ) = argmin_{Θ ≻ 0} { tr(ΘS) − log det Θ + λ|Θ|₂²/2 }
//! ```
//!
//! in closed form in the eigenbasis of `S`: each eigenvalue `d` of `S` maps
//! to `(−d + √(d² + 4λ)) / (2λ)`, which is strictly positive for every real
//! `d` whenever `λ > 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense real symmetric matrix with finite entries.
///
/// Symmetry is structural: all constructors either mirror one triangle or
/// average `A` with its transpose, so `get(i, j) == get(j, i)` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    m: DMatrix<f64>,
}

impl SymmetricMatrix {
    /// Builds a `p x p` symmetric matrix from `f(i, j)` evaluated on the
    /// lower triangle (`i >= j`) and mirrored.
    pub fn from_fn(p: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidInput("matrix dimension must be positive".into()));
        }
        let mut m = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..=i {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let s = Self { m };
        s.check_finite()?;
        Ok(s)
    }

    /// Validates that `m` is square and symmetric (to a small relative
    /// tolerance), then symmetrizes it exactly.
    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(Error::InvalidInput(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = 1.0 + m.amax();
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self::symmetrized(m)?)
    }

    /// Symmetrizes `(A + Aᵀ)/2` without the near-symmetry check. Used for
    /// products of the form `V D Vᵀ` that are symmetric up to roundoff.
    pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> Result<Self> {
        let p = m.nrows();
        for i in 0..p {
            for j in 0..i {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let s = Self { m };
        s.check_finite()?;
        Ok(s)
    }

    pub fn identity(p: usize) -> Self {
        Self {
            m: DMatrix::identity(p, p),
        }
    }

    pub fn zeros(p: usize) -> Self {
        Self {
            m: DMatrix::zeros(p, p),
        }
    }

    pub fn from_diagonal(d: &DVector<f64>) -> Result<Self> {
        let s = Self {
            m: DMatrix::from_diagonal(d),
        };
        s.check_finite()?;
        Ok(s)
    }

    fn check_finite(&self) -> Result<()> {
        if self.m.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput("matrix contains non-finite entries".into()))
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.m.diagonal()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    /// Largest absolute entry, `‖A‖_max`.
    pub fn max_abs(&self) -> f64 {
        self.m.amax()
    }

    /// Entrywise 1-norm `Σ_{ij} |a_ij|`.
    pub fn entrywise_l1(&self) -> f64 {
        self.m.iter().map(|v| v.abs()).sum()
    }

    /// Squared Frobenius norm `Σ_{ij} a_ij²`.
    pub fn frob_sq(&self) -> f64 {
        self.m.iter().map(|v| v * v).sum()
    }

    /// `tr(A B)` for symmetric `A`, `B`; equals `Σ_{ij} a_ij b_ij`.
    pub fn trace_product(&self, other: &SymmetricMatrix) -> f64 {
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Quadratic form `xᵀ A x`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.m * x))
    }

    /// Linear combination `a·self + b·other`; symmetry is preserved exactly.
    pub fn linear_combination(&self, a: f64, other: &SymmetricMatrix, b: f64) -> SymmetricMatrix {
        SymmetricMatrix {
            m: &self.m * a + &other.m * b,
        }
    }

    pub fn scale(&self, a: f64) -> SymmetricMatrix {
        SymmetricMatrix { m: &self.m * a }
    }

    pub fn add(&self, other: &SymmetricMatrix) -> SymmetricMatrix {
        SymmetricMatrix {
            m: &self.m + &other.m,
        }
    }

    pub fn sub(&self, other: &SymmetricMatrix) -> SymmetricMatrix {
        SymmetricMatrix {
            m: &self.m - &other.m,
        }
    }

    /// True when a Cholesky factorization exists.
    pub fn is_positive_definite(&self) -> bool {
        self.m.clone().cholesky().is_some()
    }

    /// Inverse via Cholesky. Fails on non-positive-definite input.
    pub fn inverse_pd(&self, context: &'static str) -> Result<SymmetricMatrix> {
        let chol = self
            .m
            .clone()
            .cholesky()
            .ok_or(Error::PositiveDefiniteRequired { context })?;
        SymmetricMatrix::symmetrized(chol.inverse())
    }
}

/// Eigendecomposition `S = V diag(d) Vᵀ` with `V` orthogonal and the
/// eigenvalues sorted in descending order (ties keep eigensolver order).
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

impl EigenDecomposition {
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    /// Rebuilds `V diag(d) Vᵀ`.
    pub fn reconstruct(&self) -> Result<SymmetricMatrix> {
        self.conjugate_diagonal(&self.values)
    }

    /// Builds `V diag(w) Vᵀ` for an arbitrary spectrum `w` in this basis.
    pub fn conjugate_diagonal(&self, w: &DVector<f64>) -> Result<SymmetricMatrix> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= w[j];
        }
        SymmetricMatrix::symmetrized(&scaled * self.vectors.transpose())
    }
}

/// Maximum QR iterations before the eigensolver reports failure.
fn eigen_iteration_cap(p: usize) -> usize {
    200 * p.max(8)
}

/// Symmetric eigendecomposition with descending eigenvalues.
pub fn sym_eig(s: &SymmetricMatrix) -> Result<EigenDecomposition> {
    let p = s.dim();
    let eig = nalgebra::SymmetricEigen::try_new(s.m.clone(), f64::EPSILON, eigen_iteration_cap(p))
        .ok_or(Error::EigenFailed { dim: p })?;

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });

    let mut vectors = DMatrix::zeros(p, p);
    let mut values = DVector::zeros(p);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigenDecomposition { vectors, values })
}

/// Spectrum map of the ridge proximal operator: the output eigenvalue for an
/// input eigenvalue `d` at penalty `λ > 0`.
///
/// The textbook branch `(−d + √(d² + 4λ)) / (2λ)` cancels catastrophically
/// for large positive `d`, so that case is rewritten as `2 / (d + √(d² + 4λ))`.
pub fn ridge_spectrum_map(d: f64, lambda: f64) -> f64 {
    debug_assert!(lambda > 0.0);
    let root = (d * d + 4.0 * lambda).sqrt();
    if d > 0.0 {
        2.0 / (d + root)
    } else {
        (root - d) / (2.0 * lambda)
    }
}

/// Ridge proximal operator `Q(S, λ)`.
///
/// For `λ > 0` the result is `V diag(q(d)) Vᵀ` with `q` the spectrum map
/// above, evaluated in the eigenbasis `S = V diag(d) Vᵀ`; the input may be
/// indefinite. For `λ = 0` the operator degenerates to the exact inverse and
/// `S` must be positive definite.
pub fn q_operator(s: &SymmetricMatrix, lambda: f64) -> Result<SymmetricMatrix> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidInput(format!(
            "ridge penalty must be a finite non-negative value, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return s.inverse_pd("Q(S, 0) requires positive definite S");
    }
    let eig = sym_eig(s)?;
    let mapped = eig.values.map(|d| ridge_spectrum_map(d, lambda));
    eig.conjugate_diagonal(&mapped)
}

/// Log-determinant via Cholesky; requires positive definiteness.
pub fn logdet(s: &SymmetricMatrix) -> Result<f64> {
    let chol = s
        .m
        .clone()
        .cholesky()
        .ok_or(Error::PositiveDefiniteRequired {
            context: "log-determinant",
        })?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Squared Frobenius norm as a free function, mirroring the method.
pub fn frob_sq(a: &SymmetricMatrix) -> f64 {
    a.frob_sq()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_symmetric(p: usize, range: f64, rng: &mut ChaCha8Rng) -> SymmetricMatrix {
        SymmetricMatrix::from_fn(p, |_, _| rng.gen_range(-range..range)).unwrap()
    }

    fn random_pd(p: usize, rng: &mut ChaCha8Rng) -> SymmetricMatrix {
        // A Aᵀ + I is comfortably positive definite.
        let a = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
        SymmetricMatrix::symmetrized(&a * a.transpose() + DMatrix::identity(p, p)).unwrap()
    }

    #[test]
    fn eig_identity() {
        let eig = sym_eig(&SymmetricMatrix::identity(3)).unwrap();
        for v in eig.values().iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
        let vtv = eig.vectors().transpose() * eig.vectors();
        assert!((vtv - DMatrix::identity(3, 3)).amax() <= 1e-10);
    }

    #[test]
    fn eig_diagonal_sorted_descending() {
        let s = SymmetricMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0])).unwrap();
        let eig = sym_eig(&s).unwrap();
        assert_abs_diff_eq!(eig.values()[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values()[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eig_reconstruction_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_symmetric(5, 2.0, &mut rng);
        let eig = sym_eig(&s).unwrap();
        let recon = eig.reconstruct().unwrap();
        assert!(recon.sub(&s).max_abs() <= 1e-8 * (1.0 + s.max_abs()));
        let p = s.dim();
        let vtv = eig.vectors().transpose() * eig.vectors();
        assert!((vtv - DMatrix::identity(p, p)).amax() <= 1e-10);
    }

    #[test]
    fn q_operator_identity_case() {
        let q = q_operator(&SymmetricMatrix::identity(2), 2.0).unwrap();
        // (−1 + √(1 + 8)) / 4 = 0.5
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 0.5 } else { 0.0 };
                assert_abs_diff_eq!(q.get(i, j), want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn q_operator_negative_scalar() {
        let s = SymmetricMatrix::from_diagonal(&DVector::from_vec(vec![-1.0])).unwrap();
        let q = q_operator(&s, 2.0).unwrap();
        assert_abs_diff_eq!(q.get(0, 0), 1.0, epsilon = 1e-12);
        // stationarity: S − Θ⁻¹ + λΘ = −1 − 1 + 2·1 = 0
        assert_abs_diff_eq!(-1.0 - 1.0 / q.get(0, 0) + 2.0 * q.get(0, 0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn q_operator_zero_lambda_is_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_pd(4, &mut rng);
        let q = q_operator(&s, 0.0).unwrap();
        let prod = s.as_dmatrix() * q.as_dmatrix();
        assert!((prod - DMatrix::identity(4, 4)).amax() <= 1e-10);
    }

    #[test]
    fn q_operator_zero_lambda_rejects_indefinite() {
        let s = SymmetricMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert!(matches!(
            q_operator(&s, 0.0),
            Err(Error::PositiveDefiniteRequired { .. })
        ));
    }

    #[test]
    fn q_operator_stationarity_and_commuting() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &p in &[3usize, 10, 50] {
            for &lambda in &[0.05, 1.0, 30.0] {
                let s = random_symmetric(p, 2.0, &mut rng);
                let theta = q_operator(&s, lambda).unwrap();
                let theta_inv = theta.inverse_pd("q output").unwrap();
                let resid = s
                    .sub(&theta_inv)
                    .add(&theta.scale(lambda));
                assert!(
                    resid.max_abs() <= 1e-8,
                    "stationarity residual {} at p={p}, lambda={lambda}",
                    resid.max_abs()
                );
                let st = s.as_dmatrix() * theta.as_dmatrix();
                let ts = theta.as_dmatrix() * s.as_dmatrix();
                assert!((st - ts).amax() <= 1e-8);
            }
        }
    }

    #[test]
    fn q_operator_matches_descent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = random_pd(4, &mut rng);
        let theta = q_operator(&s, 0.3).unwrap();
        let oracle = crate::refsolve::min_ridge_objective(&s, 0.3, 1e-9, 500_000).unwrap();
        assert!(theta.sub(&oracle).max_abs() <= 1e-5);
    }

    #[test]
    fn logdet_cases() {
        assert_abs_diff_eq!(logdet(&SymmetricMatrix::identity(5)).unwrap(), 0.0, epsilon = 1e-12);
        let e = std::f64::consts::E;
        let s = SymmetricMatrix::from_diagonal(&DVector::from_vec(vec![e, e])).unwrap();
        assert_abs_diff_eq!(logdet(&s).unwrap(), 2.0, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_pd(4, &mut rng);
        let via_eig: f64 = sym_eig(&s).unwrap().values().iter().map(|v| v.ln()).sum();
        assert_abs_diff_eq!(logdet(&s).unwrap(), via_eig, epsilon = 1e-10);

        let indef = SymmetricMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0])).unwrap();
        assert!(matches!(
            logdet(&indef),
            Err(Error::PositiveDefiniteRequired { .. })
        ));
    }

    #[test]
    fn frob_sq_cases() {
        assert_abs_diff_eq!(frob_sq(&SymmetricMatrix::identity(3)), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(frob_sq(&SymmetricMatrix::zeros(4)), 0.0, epsilon = 1e-15);
        let a = SymmetricMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 2.0 }).unwrap();
        assert_abs_diff_eq!(frob_sq(&a), 10.0, epsilon = 1e-15);
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(SymmetricMatrix::from_fn(2, |_, _| f64::NAN).is_err());
        assert!(SymmetricMatrix::from_fn(0, |_, _| 1.0).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!(SymmetricMatrix::from_dmatrix(m).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn spectrum_map_is_positive_and_shrinking(d in -50.0f64..50.0, lambda in 1e-6f64..1e4) {
            let q = ridge_spectrum_map(d, lambda);
            prop_assert!(q > 0.0);
            // stationarity of the scalar problem: d − 1/q + λq = 0
            prop_assert!((d - 1.0 / q + lambda * q).abs() <= 1e-8 * (1.0 + d.abs() + lambda * q));
            // monotone shrinkage in λ
            let q_wider = ridge_spectrum_map(d, lambda * 4.0);
            prop_assert!(q_wider <= q + 1e-12);
        }

        #[test]
        fn q_operator_preserves_eigenvectors(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_symmetric(6, 2.0, &mut rng);
            let theta = q_operator(&s, 0.7).unwrap();
            let st = s.as_dmatrix() * theta.as_dmatrix();
            let ts = theta.as_dmatrix() * s.as_dmatrix();
            prop_assert!((st - ts).amax() <= 1e-8);
        }
    }
}
