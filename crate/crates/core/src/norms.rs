//! Vector norms, induced matrix norms and logarithmic norms for the two norms
//! the toolkit supports.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    /// Euclidean norm.
    #[default]
    Two,
    /// Max norm.
    Inf,
}

impl Norm {
    pub fn name(self) -> &'static str {
        match self {
            Norm::Two => "two",
            Norm::Inf => "inf",
        }
    }

    pub fn vector(self, v: &[f64]) -> f64 {
        match self {
            Norm::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Inf => v.iter().fold(0.0, |acc, x| acc.max(x.abs())),
        }
    }

    /// Induced matrix norm. For the 2-norm this is the largest singular value.
    pub fn induced(self, m: &DMatrix<f64>) -> f64 {
        if m.is_empty() {
            return 0.0;
        }
        match self {
            Norm::Two => m
                .singular_values()
                .iter()
                .fold(0.0_f64, |acc, s| acc.max(*s)),
            Norm::Inf => m
                .row_iter()
                .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two" | "2" => Ok(Norm::Two),
            "inf" | "infinity" => Ok(Norm::Inf),
            other => Err(Error::InvalidArgument(format!("unknown norm {other:?}"))),
        }
    }
}

/// Logarithmic norm (matrix measure) of a square matrix.
///
/// 2-norm: largest eigenvalue of the symmetric part. ∞-norm: largest row value
/// of `m_ii + sum_{j != i} |m_ij|`.
pub fn log_norm(m: &DMatrix<f64>, norm: Norm) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(format!(
            "log-norm needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    if m.is_empty() {
        return Err(Error::InvalidArgument("log-norm of an empty matrix".into()));
    }
    match norm {
        Norm::Two => {
            let sym = (m + m.transpose()) * 0.5;
            let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
                .ok_or_else(|| Error::Numerical("symmetric eigensolve did not converge".into()))?;
            Ok(eig
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max))
        }
        Norm::Inf => Ok(m
            .row_iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, v)| if i == j { *v } else { v.abs() })
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)),
    }
}
