//! Generic descent solvers for the penalized likelihood objectives.
//!
//! These minimizers are deliberately slow and deliberately independent of
//! the closed-form eigenbasis solutions: gradients use Cholesky-based
//! inverses and plain backtracking line search on the positive definite
//! cone. They exist so the fast paths can be cross-checked against an
//! implementation that shares no code with them.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimator::{ClassStats, PenaltyPair};
use crate::linalg::SymmetricMatrix;

fn chol_logdet(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    Some(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

fn chol_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Some(m.clone().cholesky()?.inverse())
}

/// `tr(ΘS) − log det Θ + λ|Θ|₂²/2`, or `None` when `Θ` is not positive
/// definite.
fn ridge_objective(theta: &DMatrix<f64>, s: &DMatrix<f64>, lambda: f64) -> Option<f64> {
    let ld = chol_logdet(theta)?;
    let tr: f64 = theta.iter().zip(s.iter()).map(|(a, b)| a * b).sum();
    let fr: f64 = theta.iter().map(|v| v * v).sum();
    Some(tr - ld + 0.5 * lambda * fr)
}

/// Minimizes `tr(ΘS) − log det Θ + λ|Θ|₂²/2` over positive definite `Θ` by
/// gradient descent with backtracking, staying inside the cone.
pub fn min_ridge_objective(
    s: &SymmetricMatrix,
    lambda: f64,
    grad_tol: f64,
    max_iters: usize,
) -> Result<SymmetricMatrix> {
    let p = s.dim();
    let sm = s.as_dmatrix();
    // A scaled identity is a safe interior starting point.
    let mut theta = DMatrix::identity(p, p) * (1.0 / (1.0 + s.max_abs()));
    let mut f = ridge_objective(&theta, sm, lambda).expect("identity start is PD");

    for _ in 0..max_iters {
        let inv = chol_inverse(&theta).expect("iterates stay PD");
        let grad = sm - inv + &theta * lambda;
        if grad.amax() <= grad_tol {
            return SymmetricMatrix::symmetrized(theta);
        }
        let gnorm_sq: f64 = grad.iter().map(|v| v * v).sum();
        let mut step = 1.0;
        loop {
            let cand = &theta - &grad * step;
            if let Some(fc) = ridge_objective(&cand, sm, lambda) {
                if fc <= f - 0.25 * step * gnorm_sq {
                    theta = cand;
                    f = fc;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-18 {
                return SymmetricMatrix::symmetrized(theta);
            }
        }
    }
    Err(Error::InvalidInput(
        "reference ridge descent did not reach the gradient tolerance".into(),
    ))
}

fn joint_objective(
    thetas: &[DMatrix<f64>],
    stats: &[ClassStats],
    pen: &PenaltyPair,
) -> Option<f64> {
    let mut f = 0.0;
    for (theta, st) in thetas.iter().zip(stats) {
        let ld = chol_logdet(theta)?;
        let tr: f64 = theta
            .iter()
            .zip(st.cov().as_dmatrix().iter())
            .map(|(a, b)| a * b)
            .sum();
        f += st.count() * (tr - ld);
        f += 0.5 * pen.lambda1() * theta.iter().map(|v| v * v).sum::<f64>();
    }
    let c = thetas.len();
    for a in 0..c {
        for b in 0..c {
            let diff = &thetas[a] - &thetas[b];
            f += 0.25 * pen.lambda2() * diff.iter().map(|v| v * v).sum::<f64>();
        }
    }
    Some(f)
}

/// Minimizes the joint ridge-fusion objective by full-gradient descent over
/// all blocks at once. Requires a finite fusion penalty.
pub fn min_joint_objective(
    stats: &[ClassStats],
    pen: &PenaltyPair,
    grad_tol: f64,
    max_iters: usize,
) -> Result<Vec<SymmetricMatrix>> {
    if pen.lambda2_is_infinite() {
        return Err(Error::InvalidInput(
            "reference joint descent needs a finite fusion penalty".into(),
        ));
    }
    let c = stats.len();
    let p = stats[0].dim();
    let mut thetas: Vec<DMatrix<f64>> = stats
        .iter()
        .map(|st| DMatrix::identity(p, p) * (1.0 / (1.0 + st.cov().max_abs())))
        .collect();
    let mut f = joint_objective(&thetas, stats, pen).expect("identity start is PD");

    for _ in 0..max_iters {
        let mut grads = Vec::with_capacity(c);
        let mut gmax = 0.0f64;
        let mut gnorm_sq = 0.0;
        for (idx, st) in stats.iter().enumerate() {
            let inv = chol_inverse(&thetas[idx]).expect("iterates stay PD");
            let mut grad =
                (st.cov().as_dmatrix() - inv) * st.count() + &thetas[idx] * pen.lambda1();
            for m in 0..c {
                if m != idx {
                    grad += (&thetas[idx] - &thetas[m]) * pen.lambda2();
                }
            }
            gmax = gmax.max(grad.amax());
            gnorm_sq += grad.iter().map(|v| v * v).sum::<f64>();
            grads.push(grad);
        }
        if gmax <= grad_tol {
            return thetas
                .into_iter()
                .map(SymmetricMatrix::symmetrized)
                .collect();
        }
        let mut step = 1.0;
        loop {
            let cand: Vec<DMatrix<f64>> = thetas
                .iter()
                .zip(&grads)
                .map(|(t, g)| t - g * step)
                .collect();
            if let Some(fc) = joint_objective(&cand, stats, pen) {
                if fc <= f - 0.25 * step * gnorm_sq {
                    thetas = cand;
                    f = fc;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-18 {
                return thetas
                    .into_iter()
                    .map(SymmetricMatrix::symmetrized)
                    .collect();
            }
        }
    }
    Err(Error::InvalidInput(
        "reference joint descent did not reach the gradient tolerance".into(),
    ))
}
