use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::solve::lstsq;
use crate::error::{LrnrError, Result};

/// Least-squares fit in the Chebyshev basis `T_0..T_degree` on `[−1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevFit {
    pub coefficients: Vec<f64>,
    pub max_residual: f64,
}

impl ChebyshevFit {
    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn eval(&self, t: f64) -> f64 {
        chebyshev_eval(&self.coefficients, t)
    }
}

/// Clenshaw evaluation of `Σ c_k T_k(t)`.
pub fn chebyshev_eval(coefficients: &[f64], t: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coefficients.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    coefficients.first().copied().unwrap_or(0.0) + t * b1 - b2
}

/// `T_0(t), …, T_degree(t)` by the three-term recurrence.
pub fn chebyshev_basis(t: f64, degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(degree + 1);
    out.push(1.0);
    if degree >= 1 {
        out.push(t);
    }
    for k in 2..=degree {
        let v = 2.0 * t * out[k - 1] - out[k - 2];
        out.push(v);
    }
    out
}

/// Map `t ∈ [lo, hi]` affinely onto `[−1, 1]`.
pub fn normalize_abscissa(t: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        2.0 * (t - lo) / (hi - lo) - 1.0
    } else {
        0.0
    }
}

pub fn poly_fit(t: &[f64], y: &[f64], degree: usize) -> Result<ChebyshevFit> {
    if t.len() != y.len() {
        return Err(LrnrError::ShapeMismatch(format!(
            "poly_fit: {} abscissae and {} values",
            t.len(),
            y.len()
        )));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(LrnrError::invalid("poly_fit: non-finite sample"));
    }
    if t.iter().any(|v| v.abs() > 1.0 + 1e-12) {
        return Err(LrnrError::invalid("poly_fit: abscissae must lie in [-1, 1]"));
    }
    let mut distinct = t.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    distinct.dedup();
    if distinct.len() < degree + 1 {
        return Err(LrnrError::invalid(format!(
            "poly_fit: {} distinct abscissae for degree {degree}",
            distinct.len()
        )));
    }
    let mut vander = Matrix::zeros(t.len(), degree + 1);
    for (i, &ti) in t.iter().enumerate() {
        vander.row_mut(i).copy_from_slice(&chebyshev_basis(ti, degree));
    }
    let coefficients = lstsq(&vander, y)?;
    let max_residual = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| (chebyshev_eval(&coefficients, ti) - yi).abs())
        .fold(0.0, f64::max);
    Ok(ChebyshevFit {
        coefficients,
        max_residual,
    })
}
