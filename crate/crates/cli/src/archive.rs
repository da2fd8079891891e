//! Fitted-model persistence: a JSON document holding the parameter bundle,
//! hyperparameters, objective trace, the final smoothed state (so `predict`
//! is self-contained) and a provenance block. JSON floats are written in
//! shortest round-trip form, so save/load reproduces every value bit-exactly.

use nalgebra::{DMatrix, DVector};
use plds_core::model::{Hyperparams, LdsParams};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::CliError;

pub const ARCHIVE_FORMAT: &str = "plds-model";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    /// Row-major values.
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>, CliError> {
        if self.data.len() != self.rows * self.cols {
            return Err(CliError::Data(format!(
                "matrix payload has {} values for shape {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| {
            self.data[i * self.cols + j]
        }))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HyperparamsJson {
    pub lambda_a: f64,
    pub lambda_c: f64,
    pub d: usize,
    pub max_em_iters: usize,
    pub max_inner_iters: usize,
    pub em_tol: f64,
}

impl From<&Hyperparams> for HyperparamsJson {
    fn from(hp: &Hyperparams) -> Self {
        Self {
            lambda_a: hp.lambda_a,
            lambda_c: hp.lambda_c,
            d: hp.d,
            max_em_iters: hp.max_em_iters,
            max_inner_iters: hp.max_inner_iters,
            em_tol: hp.em_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamsJson {
    pub a: MatrixJson,
    pub c: MatrixJson,
    pub r_diag: Vec<f64>,
    pub pi0: Vec<f64>,
}

impl ParamsJson {
    pub fn from_params(p: &LdsParams) -> Self {
        Self {
            a: MatrixJson::from_matrix(&p.a),
            c: MatrixJson::from_matrix(&p.c),
            r_diag: p.r_diag.iter().copied().collect(),
            pi0: p.pi0.iter().copied().collect(),
        }
    }

    pub fn to_params(&self) -> Result<LdsParams, CliError> {
        Ok(LdsParams {
            a: self.a.to_matrix()?,
            c: self.c.to_matrix()?,
            r_diag: DVector::from_vec(self.r_diag.clone()),
            pi0: DVector::from_vec(self.pi0.clone()),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    /// Seed, for commands that draw randomness.
    pub seed: Option<u64>,
    /// The exact invocation that produced the file.
    pub command: String,
    pub tool: String,
}

impl Provenance {
    pub fn from_env(seed: Option<u64>) -> Self {
        Self {
            seed,
            command: std::env::args().collect::<Vec<_>>().join(" "),
            tool: format!("plds {}", env!("CARGO_PKG_VERSION")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelArchive {
    pub format: String,
    pub version: u32,
    pub p: usize,
    pub d: usize,
    pub t: usize,
    /// Absent for simulation ground truth.
    pub hyperparams: Option<HyperparamsJson>,
    pub params: ParamsJson,
    pub objective_trace: Vec<f64>,
    pub iterations_run: Option<usize>,
    pub converged: Option<bool>,
    /// Smoothed latent state at the final training step.
    pub x_last: Option<Vec<f64>>,
    /// Smoothed latent covariance at the final training step (row-major).
    pub v_last: Option<MatrixJson>,
    pub provenance: Provenance,
}

impl ModelArchive {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        let archive: ModelArchive = serde_json::from_str(&text)?;
        if archive.format != ARCHIVE_FORMAT {
            return Err(CliError::Data(format!(
                "{} is not a model archive (format {:?})",
                path.display(),
                archive.format
            )));
        }
        if archive.version != ARCHIVE_VERSION {
            return Err(CliError::Data(format!(
                "unsupported archive version {}",
                archive.version
            )));
        }
        Ok(archive)
    }

    pub fn x_last_vector(&self) -> Result<DVector<f64>, CliError> {
        let x = self.x_last.as_ref().ok_or_else(|| {
            CliError::Data("archive carries no final latent state; refit to predict".into())
        })?;
        Ok(DVector::from_vec(x.clone()))
    }
}
