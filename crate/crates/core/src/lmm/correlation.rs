use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Exponentially decaying correlation `rho_ij = exp(-beta |i - j|)` between
/// the Brownian drivers of the stochastic rates, with its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSpec {
    beta: f64,
    n: usize,
    matrix: Vec<f64>,
    chol: Vec<f64>,
}

impl CorrelationSpec {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Correlation of neighbouring drivers, `exp(-beta)`.
    pub fn decay(&self) -> f64 {
        (-self.beta).exp()
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn rho(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    /// Row-major `n x n` correlation matrix.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// Row-major lower-triangular Cholesky factor.
    pub fn cholesky(&self) -> &[f64] {
        &self.chol
    }

    /// `out = chol * z`.
    pub fn correlate(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.chol[i * self.n..i * self.n + i + 1];
            out[i] = row.iter().zip(&z[..=i]).map(|(c, z)| c * z).sum();
        }
    }
}

pub fn correlation_matrix(beta: f64, n_rates: usize) -> Result<CorrelationSpec> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::NonPositiveBeta(beta));
    }
    if n_rates == 0 {
        return Err(Error::ShapeMismatch {
            expected: "at least one stochastic rate".into(),
            got: "0".into(),
        });
    }
    let m = DMatrix::from_fn(n_rates, n_rates, |i, j| {
        (-beta * (i as f64 - j as f64).abs()).exp()
    });
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::CorrelationNotPositiveDefinite)?
        .l();
    let to_row_major = |a: &DMatrix<f64>| {
        (0..n_rates)
            .flat_map(|i| (0..n_rates).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)])
            .collect::<Vec<_>>()
    };
    Ok(CorrelationSpec {
        beta,
        n: n_rates,
        matrix: to_row_major(&m),
        chol: to_row_major(&chol),
    })
}
