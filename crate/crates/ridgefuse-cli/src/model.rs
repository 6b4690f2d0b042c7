//! JSON model persistence.
//!
//! The file stores class probabilities, means, and precision matrices along
//! with the penalty that produced them and enough metadata to reapply a
//! standardization transform at classification time. `lambda2 = null`
//! encodes the infinite-fusion sentinel. Numbers round-trip losslessly.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use ridgefuse::classify::{ClassParams, ModelParams};
use ridgefuse::estimator::{PenaltyPair, Standardization};
use ridgefuse::linalg::SymmetricMatrix;

use crate::CliError;

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub classes: usize,
    pub dim: usize,
    pub pi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub theta: Vec<Vec<Vec<f64>>>,
    pub penalty: PenaltySection,
    pub meta: MetaSection,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PenaltySection {
    pub lambda1: f64,
    /// `null` encodes the infinite-fusion sentinel.
    pub lambda2: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetaSection {
    pub version: String,
    pub seed: Option<u64>,
    pub standardization: Option<StandardizationSection>,
    pub converged: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StandardizationSection {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ModelFile {
    pub fn build(
        params: &ModelParams,
        pen: &PenaltyPair,
        seed: Option<u64>,
        standardization: Option<&Standardization>,
        converged: bool,
    ) -> Self {
        let dim = params.dim();
        ModelFile {
            classes: params.n_classes(),
            dim,
            pi: params.classes().iter().map(|c| c.pi).collect(),
            mu: params
                .classes()
                .iter()
                .map(|c| c.mean.iter().copied().collect())
                .collect(),
            theta: params
                .classes()
                .iter()
                .map(|c| {
                    (0..dim)
                        .map(|i| (0..dim).map(|j| c.precision.get(i, j)).collect())
                        .collect()
                })
                .collect(),
            penalty: PenaltySection {
                lambda1: pen.lambda1(),
                lambda2: (!pen.lambda2_is_infinite()).then(|| pen.lambda2()),
            },
            meta: MetaSection {
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                standardization: standardization.map(|s| StandardizationSection {
                    center: s.center().iter().copied().collect(),
                    scale: s.scale().iter().copied().collect(),
                }),
                converged,
            },
        }
    }

    pub fn params(&self) -> Result<ModelParams, CliError> {
        if self.pi.len() != self.classes
            || self.mu.len() != self.classes
            || self.theta.len() != self.classes
        {
            return Err(CliError::input("model file sections disagree on the class count"));
        }
        let mut classes = Vec::with_capacity(self.classes);
        for c in 0..self.classes {
            if self.mu[c].len() != self.dim {
                return Err(CliError::input(format!(
                    "model file: mean {c} has wrong dimension"
                )));
            }
            let theta = &self.theta[c];
            if theta.len() != self.dim || theta.iter().any(|row| row.len() != self.dim) {
                return Err(CliError::input(format!(
                    "model file: precision {c} has wrong dimension"
                )));
            }
            let precision = SymmetricMatrix::from_dmatrix(nalgebra::DMatrix::from_fn(
                self.dim,
                self.dim,
                |i, j| theta[i][j],
            ))
            .map_err(CliError::from)?;
            classes.push(ClassParams {
                pi: self.pi[c],
                mean: DVector::from_vec(self.mu[c].clone()),
                precision,
            });
        }
        ModelParams::new(classes).map_err(CliError::from)
    }

    pub fn penalty(&self) -> Result<PenaltyPair, CliError> {
        match self.penalty.lambda2 {
            Some(l2) => PenaltyPair::new(self.penalty.lambda1, l2),
            None => PenaltyPair::infinite_fusion(self.penalty.lambda1),
        }
        .map_err(CliError::from)
    }

    pub fn standardization(&self) -> Result<Option<Standardization>, CliError> {
        match &self.meta.standardization {
            None => Ok(None),
            Some(s) => Standardization::from_parts(
                DVector::from_vec(s.center.clone()),
                DVector::from_vec(s.scale.clone()),
            )
            .map(Some)
            .map_err(CliError::from),
        }
    }

    pub fn write(&self, path: &std::path::Path) -> Result<(), CliError> {
        let file = std::fs::File::create(path)
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
        let mut writer = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut writer, self)
            .map_err(|e| CliError::input(format!("cannot encode {}: {e}", path.display())))?;
        use std::io::Write;
        writeln!(writer).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Ok(())
    }

    pub fn read(path: &std::path::Path) -> Result<Self, CliError> {
        let file = std::fs::File::open(path)
            .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| CliError::input(format!("cannot parse {}: {e}", path.display())))
    }
}
