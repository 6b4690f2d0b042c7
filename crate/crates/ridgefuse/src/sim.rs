//! Seeded data-generating models and experiment drivers for the
//! classification-error benchmarks.
//!
//! Every replication derives its own seed stream from the experiment seed,
//! so results are reproducible bit for bit and independent of how the
//! replications are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::classify::{cer, qda_predict_batch, rda_grid_search, rda_precisions, ModelParams, RdaGrid};
use crate::error::{Error, Result};
use crate::estimator::{class_stats, fit};
use crate::linalg::{sym_eig, SymmetricMatrix};
use crate::semisup::{fit_em, semisup_grid_search, SemiData};
use crate::tuning::{grid_search, GridSpec};

/// Splitmix-style seed derivation: deterministic child seeds for
/// replications and their sampling stages.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Two-class Gaussian population parameters.
#[derive(Debug, Clone)]
pub struct GaussParams {
    pub sigma1: SymmetricMatrix,
    pub sigma2: SymmetricMatrix,
    pub mu1: DVector<f64>,
    pub mu2: DVector<f64>,
}

fn verify_pd(sigma: &SymmetricMatrix, what: &'static str) -> Result<()> {
    let min = sym_eig(sigma)?.values().min();
    if min > 0.0 {
        Ok(())
    } else {
        Err(Error::PositiveDefiniteRequired { context: what })
    }
}

fn constant_vector(p: usize, v: f64) -> DVector<f64> {
    DVector::from_element(p, v)
}

/// Piecewise eigenvalue bands: `hi·(p−j+1)/p` for `j ≤ 6`,
/// `mid·(p−j+1)/p` for `7 ≤ j ≤ 11`, `(p−j+1)/p` otherwise (`j` is
/// 1-based).
fn banded_eigenvalue(j: usize, p: usize, hi: f64, mid: f64) -> f64 {
    let base = (p - j + 1) as f64 / p as f64;
    if j <= 6 {
        hi * base
    } else if j <= 11 {
        mid * base
    } else {
        base
    }
}

/// Shared random eigenbasis: right singular vectors of a seeded `100 x p`
/// standard Gaussian matrix, ordered by descending singular value.
fn random_eigenbasis(p: usize, seed: u64) -> Result<crate::linalg::EigenDecomposition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(100, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let gram = SymmetricMatrix::symmetrized(a.transpose() * &a)?;
    sym_eig(&gram)
}

/// Ill-conditioned pair with a common random eigenbasis: Σ1 has eigenvalue
/// bands 100/10/1 and Σ2 bands 500/50/1; `μ1 = 5 log(p)/p · 1`, `μ2 = 0`.
pub fn gen_eigstruct(p: usize, seed: u64) -> Result<GaussParams> {
    if p < 12 {
        return Err(Error::InvalidInput(format!(
            "the banded eigenvalue design needs p >= 12, got {p}"
        )));
    }
    let basis = random_eigenbasis(p, seed)?;
    let d1 = DVector::from_fn(p, |j, _| banded_eigenvalue(j + 1, p, 100.0, 10.0));
    let d2 = DVector::from_fn(p, |j, _| banded_eigenvalue(j + 1, p, 500.0, 50.0));
    let sigma1 = basis.conjugate_diagonal(&d1)?;
    let sigma2 = basis.conjugate_diagonal(&d2)?;
    verify_pd(&sigma1, "generated covariance")?;
    verify_pd(&sigma2, "generated covariance")?;
    Ok(GaussParams {
        sigma1,
        sigma2,
        mu1: constant_vector(p, 5.0 * (p as f64).ln() / p as f64),
        mu2: DVector::zeros(p),
    })
}

/// Tridiagonal covariance: `1` on the diagonal, `rho` on the first
/// off-diagonals.
pub fn gen_tridiag(p: usize, rho: f64) -> Result<SymmetricMatrix> {
    if !(-1.0..1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!(
            "tridiagonal correlation must lie in (-1, 1), got {rho}"
        )));
    }
    let sigma = SymmetricMatrix::from_fn(p, |i, j| {
        if i == j {
            1.0
        } else if i.abs_diff(j) == 1 {
            rho
        } else {
            0.0
        }
    })?;
    verify_pd(&sigma, "tridiagonal covariance")?;
    Ok(sigma)
}

/// Mixed pair: Σ1 tridiagonal with `rho = 0.5`, Σ2 the 500/50/1 banded
/// covariance on a seeded random eigenbasis; `μ1 = 1/p · 1`, `μ2 = 0`.
pub fn gen_eig_vs_tridiag(p: usize, seed: u64) -> Result<GaussParams> {
    if p < 12 {
        return Err(Error::InvalidInput(format!(
            "the banded eigenvalue design needs p >= 12, got {p}"
        )));
    }
    let sigma1 = gen_tridiag(p, 0.5)?;
    let basis = random_eigenbasis(p, seed)?;
    let d2 = DVector::from_fn(p, |j, _| banded_eigenvalue(j + 1, p, 500.0, 50.0));
    let sigma2 = basis.conjugate_diagonal(&d2)?;
    verify_pd(&sigma2, "generated covariance")?;
    Ok(GaussParams {
        sigma1,
        sigma2,
        mu1: constant_vector(p, 1.0 / p as f64),
        mu2: DVector::zeros(p),
    })
}

/// Identity covariances with mean separation `μ1 = 10 log(p)/p · 1`.
pub fn gen_identity(p: usize) -> Result<GaussParams> {
    if p == 0 {
        return Err(Error::InvalidInput("dimension must be positive".into()));
    }
    Ok(GaussParams {
        sigma1: SymmetricMatrix::identity(p),
        sigma2: SymmetricMatrix::identity(p),
        mu1: constant_vector(p, 10.0 * (p as f64).ln() / p as f64),
        mu2: DVector::zeros(p),
    })
}

fn ar_entry(rho: f64, i: usize, j: usize) -> f64 {
    rho.powi(i.abs_diff(j) as i32)
}

/// Block-diagonal pair with two equal blocks: Σ1 uses AR(1) blocks with
/// correlations 0.95 and 0.8; Σ2 replaces the second block's correlation by
/// `rho`. `μ1 = 20 log(p)/p · 1`, `μ2 = 0`.
pub fn gen_blockdiag(p: usize, rho: f64) -> Result<GaussParams> {
    if p < 2 || p % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "the block-diagonal design needs an even p >= 2, got {p}"
        )));
    }
    if !(-1.0..1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!(
            "block correlation must lie in (-1, 1), got {rho}"
        )));
    }
    let h = p / 2;
    let build = |second_rho: f64| {
        SymmetricMatrix::from_fn(p, |i, j| {
            if i < h && j < h {
                ar_entry(0.95, i, j)
            } else if i >= h && j >= h {
                ar_entry(second_rho, i - h, j - h)
            } else {
                0.0
            }
        })
    };
    let sigma1 = build(0.8)?;
    let sigma2 = build(rho)?;
    verify_pd(&sigma1, "block-diagonal covariance")?;
    verify_pd(&sigma2, "block-diagonal covariance")?;
    Ok(GaussParams {
        sigma1,
        sigma2,
        mu1: constant_vector(p, 20.0 * (p as f64).ln() / p as f64),
        mu2: DVector::zeros(p),
    })
}

/// Tridiagonal pair: Σ1 with off-diagonal 0.4, Σ2 with off-diagonal `rho`;
/// `μ1 = 10 log(p)/p · 1`, `μ2 = 0`.
pub fn gen_tridiag_pair(p: usize, rho: f64) -> Result<GaussParams> {
    Ok(GaussParams {
        sigma1: gen_tridiag(p, 0.4)?,
        sigma2: gen_tridiag(p, rho)?,
        mu1: constant_vector(p, 10.0 * (p as f64).ln() / p as f64),
        mu2: DVector::zeros(p),
    })
}

/// Draws `n` rows from `N(mu, Sigma)` via the Cholesky factor:
/// `x_i = μ + L z_i` with `z_i` seeded standard normal.
pub fn sample_gaussian(
    n: usize,
    mu: &DVector<f64>,
    sigma: &SymmetricMatrix,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let p = mu.len();
    if sigma.dim() != p {
        return Err(Error::InvalidInput(format!(
            "mean has length {p} but covariance is {}x{}",
            sigma.dim(),
            sigma.dim()
        )));
    }
    let chol = sigma
        .as_dmatrix()
        .clone()
        .cholesky()
        .ok_or(Error::PositiveDefiniteRequired {
            context: "Gaussian sampling",
        })?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, p);
    let mut z = DVector::zeros(p);
    for i in 0..n {
        for j in 0..p {
            z[j] = rng.sample::<f64, _>(StandardNormal);
        }
        let row = mu + &l * &z;
        x.row_mut(i).copy_from(&row.transpose());
    }
    Ok(x)
}

/// The simulated designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    /// Common random eigenbasis, banded spectra 100/10/1 vs 500/50/1.
    Eigstruct,
    /// Tridiagonal (0.5) vs the 500/50/1 banded covariance.
    EigVsTridiag,
    /// Equal identity covariances.
    Identity,
    /// Block-diagonal AR(1) blocks, second block correlation `rho`.
    Blockdiag,
    /// Tridiagonal 0.4 vs tridiagonal `rho`.
    Tridiag,
    /// Semi-supervised variant of the block-diagonal design (`rho = 0.25`).
    Semisup,
}

impl Design {
    pub fn name(&self) -> &'static str {
        match self {
            Design::Eigstruct => "eigstruct",
            Design::EigVsTridiag => "eig-vs-tridiag",
            Design::Identity => "identity",
            Design::Blockdiag => "blockdiag",
            Design::Tridiag => "tridiag",
            Design::Semisup => "semisup",
        }
    }
}

/// Classification methods driven by the experiment harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ridge,
    Rda,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ridge => "ridge",
            Method::Rda => "rda",
        }
    }
}

/// Experiment configuration. `rho` is required by the block-diagonal and
/// tridiagonal designs and defaults to 0.25 for the semi-supervised design.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub design: Design,
    pub p: usize,
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    pub replications: usize,
    pub seed: u64,
    pub rho: Option<f64>,
    pub ridge_grid: GridSpec,
    pub rda_grid: RdaGrid,
    pub folds: usize,
    pub eps: f64,
    pub eps_em: f64,
    pub n_unlabeled_per_class: usize,
}

impl SimConfig {
    pub fn new(design: Design, p: usize, replications: usize, seed: u64) -> Result<Self> {
        if p < 2 {
            return Err(Error::InvalidInput(format!("dimension must be >= 2, got {p}")));
        }
        if replications == 0 {
            return Err(Error::InvalidInput("need at least one replication".into()));
        }
        Ok(Self {
            design,
            p,
            n_train_per_class: 25,
            n_test_per_class: 500,
            replications,
            seed,
            rho: None,
            ridge_grid: default_ridge_grid(design)?,
            rda_grid: RdaGrid::unit_lattice(11)?,
            folds: 5,
            eps: crate::estimator::DEFAULT_EPS,
            eps_em: crate::semisup::DEFAULT_EPS_EM,
            n_unlabeled_per_class: 250,
        })
    }

    fn rho_for(&self) -> Result<f64> {
        match self.design {
            Design::Blockdiag | Design::Tridiag => self.rho.ok_or_else(|| {
                Error::InvalidInput(format!(
                    "the {} design requires a block correlation rho",
                    self.design.name()
                ))
            }),
            Design::Semisup => Ok(self.rho.unwrap_or(0.25)),
            _ => Ok(self.rho.unwrap_or(0.0)),
        }
    }
}

/// Default tuning grid used by the simulation harness: powers of ten
/// `10^-5 ..= 10^5`.
pub fn default_ridge_grid(_design: Design) -> Result<GridSpec> {
    GridSpec::decades(-5, 5)
}

/// Per-method summary of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub mean_cer: f64,
    /// Sample standard deviation (divisor R−1) of the per-replication CERs.
    pub sd_cer: f64,
    /// Standard error of the mean, `sd / sqrt(R)`.
    pub se_cer: f64,
    pub cers: Vec<f64>,
}

/// Aggregate experiment result.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub methods: Vec<MethodSummary>,
}

impl SimResult {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

fn summarize(method: &str, cers: Vec<f64>) -> MethodSummary {
    let r = cers.len() as f64;
    let mean = cers.iter().sum::<f64>() / r;
    let sd = if cers.len() > 1 {
        (cers.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (r - 1.0)).sqrt()
    } else {
        0.0
    };
    MethodSummary {
        method: method.to_string(),
        mean_cer: mean,
        sd_cer: sd,
        se_cer: sd / r.sqrt(),
        cers,
    }
}

struct LabeledSample {
    x: DMatrix<f64>,
    y: Vec<usize>,
}

fn two_class_sample(
    n_per_class: usize,
    params: &GaussParams,
    seed: u64,
) -> Result<LabeledSample> {
    let p = params.mu1.len();
    let x1 = sample_gaussian(n_per_class, &params.mu1, &params.sigma1, derive_seed(seed, 0))?;
    let x2 = sample_gaussian(n_per_class, &params.mu2, &params.sigma2, derive_seed(seed, 1))?;
    let mut x = DMatrix::zeros(2 * n_per_class, p);
    x.view_mut((0, 0), (n_per_class, p)).copy_from(&x1);
    x.view_mut((n_per_class, 0), (n_per_class, p)).copy_from(&x2);
    let y = (0..2 * n_per_class)
        .map(|i| usize::from(i >= n_per_class))
        .collect();
    Ok(LabeledSample { x, y })
}

fn design_params(cfg: &SimConfig, seed: u64) -> Result<GaussParams> {
    match cfg.design {
        Design::Eigstruct => gen_eigstruct(cfg.p, seed),
        Design::EigVsTridiag => gen_eig_vs_tridiag(cfg.p, seed),
        Design::Identity => gen_identity(cfg.p),
        Design::Blockdiag => gen_blockdiag(cfg.p, cfg.rho_for()?),
        Design::Tridiag => gen_tridiag_pair(cfg.p, cfg.rho_for()?),
        Design::Semisup => gen_blockdiag(cfg.p, cfg.rho_for()?),
    }
}

fn run_one_qda(cfg: &SimConfig, methods: &[Method], rep: usize) -> Result<Vec<f64>> {
    let rep_seed = derive_seed(cfg.seed, rep as u64);
    let params = design_params(cfg, derive_seed(rep_seed, 1))?;
    let train = two_class_sample(cfg.n_train_per_class, &params, derive_seed(rep_seed, 2))?;
    let test = two_class_sample(cfg.n_test_per_class, &params, derive_seed(rep_seed, 3))?;
    let stats = class_stats(&train.x, &train.y)?;

    let mut cers = Vec::with_capacity(methods.len());
    for method in methods {
        let model = match method {
            Method::Ridge => {
                let (pen, _) = grid_search(
                    &train.x,
                    &train.y,
                    &cfg.ridge_grid,
                    cfg.folds,
                    derive_seed(rep_seed, 4),
                    cfg.eps,
                )?;
                let fitted = fit(&stats, &pen, None, cfg.eps)?;
                ModelParams::from_stats(&stats, &fitted.precisions)?
            }
            Method::Rda => {
                let rda = rda_grid_search(
                    &train.x,
                    &train.y,
                    &cfg.rda_grid,
                    cfg.folds,
                    derive_seed(rep_seed, 5),
                )?;
                let precisions = rda_precisions(&stats, &rda)?;
                ModelParams::from_stats(&stats, &precisions)?
            }
        };
        let preds = qda_predict_batch(&test.x, &model);
        cers.push(cer(&preds, &test.y)?);
    }
    Ok(cers)
}

/// Tune-fit-classify experiment for the supervised designs: per
/// replication, each method is tuned by validation likelihood on the
/// training split, refit, and scored on an independent test set.
pub fn run_qda_experiment(cfg: &SimConfig, methods: &[Method]) -> Result<SimResult> {
    if cfg.design == Design::Semisup {
        return Err(Error::InvalidInput(
            "the semi-supervised design is driven by run_semisup_experiment".into(),
        ));
    }
    if methods.is_empty() {
        return Err(Error::InvalidInput("no methods requested".into()));
    }
    cfg.rho_for()?;
    let per_rep: Vec<Result<Vec<f64>>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_one_qda(cfg, methods, rep).map_err(|e| e.in_replication(rep)))
        .collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.replications); methods.len()];
    for rep in per_rep {
        let cers = rep?;
        for (col, c) in columns.iter_mut().zip(cers) {
            col.push(c);
        }
    }
    Ok(SimResult {
        methods: methods
            .iter()
            .zip(columns)
            .map(|(m, cers)| summarize(m.name(), cers))
            .collect(),
    })
}

fn run_one_semisup(cfg: &SimConfig, rep: usize) -> Result<(f64, f64)> {
    let rep_seed = derive_seed(cfg.seed, rep as u64);
    let params = design_params(cfg, derive_seed(rep_seed, 1))?;
    let labeled = two_class_sample(cfg.n_train_per_class, &params, derive_seed(rep_seed, 2))?;
    let unlabeled = two_class_sample(cfg.n_unlabeled_per_class, &params, derive_seed(rep_seed, 3))?;
    let data = SemiData::new(labeled.x, labeled.y.clone(), unlabeled.x.clone())?;

    let (pen_semisup, _) = semisup_grid_search(
        &data,
        &cfg.ridge_grid,
        cfg.folds,
        derive_seed(rep_seed, 4),
        cfg.eps_em,
        cfg.eps,
    )?;
    let (pen_labeled, _) = grid_search(
        data.labeled_x(),
        data.labeled_y(),
        &cfg.ridge_grid,
        cfg.folds,
        derive_seed(rep_seed, 5),
        cfg.eps,
    )?;

    let mut out = [0.0; 2];
    for (slot, pen) in [(0, pen_semisup), (1, pen_labeled)] {
        let em = fit_em(&data, &pen, cfg.eps_em, cfg.eps)?;
        let preds = qda_predict_batch(&unlabeled.x, &em.params);
        out[slot] = cer(&preds, &unlabeled.y)?;
    }
    Ok((out[0], out[1]))
}

/// Semi-supervised experiment: per replication, fit penalized EM with the
/// penalty chosen by the unlabeled-aware validation likelihood and by the
/// labeled-only validation likelihood, then score both on the unlabeled
/// truth. Rows are reported as `ridge` and `ridge-labeled`.
pub fn run_semisup_experiment(cfg: &SimConfig) -> Result<SimResult> {
    if cfg.design != Design::Semisup {
        return Err(Error::InvalidInput(
            "run_semisup_experiment requires the semisup design".into(),
        ));
    }
    let per_rep: Vec<Result<(f64, f64)>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_one_semisup(cfg, rep).map_err(|e| e.in_replication(rep)))
        .collect();
    let mut semisup = Vec::with_capacity(cfg.replications);
    let mut labeled_only = Vec::with_capacity(cfg.replications);
    for rep in per_rep {
        let (s, l) = rep?;
        semisup.push(s);
        labeled_only.push(l);
    }
    Ok(SimResult {
        methods: vec![
            summarize("ridge", semisup),
            summarize("ridge-labeled", labeled_only),
        ],
    })
}
