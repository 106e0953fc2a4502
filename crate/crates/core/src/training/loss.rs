//! Normalized misfits and the coefficient/factor regularizers.

use crate::error::{LrnrError, Result};
use crate::lrnr::{CoeffVector, LrnrFactors};
use crate::numerics::Matrix;

/// Number of output components per weight, or an error if the lengths disagree.
fn components(yhat: &[f64], y: &[f64], weights: &[f64]) -> Result<usize> {
    if yhat.len() != y.len() || weights.is_empty() || y.len() % weights.len() != 0 {
        return Err(LrnrError::ShapeMismatch(format!(
            "misfit: {} predictions, {} references, {} weights",
            yhat.len(),
            y.len(),
            weights.len()
        )));
    }
    Ok(y.len() / weights.len())
}

fn pow_q(v: f64, q: u32) -> f64 {
    if q == 1 {
        v.abs()
    } else {
        v * v
    }
}

/// Weighted `Σ w |y|^q` with `w` shared by the `m` components of a point.
pub(crate) fn weighted_power(y: &[f64], weights: &[f64], q: u32) -> f64 {
    let m = y.len() / weights.len();
    let mut acc = 0.0;
    for (row, &w) in y.chunks_exact(m).zip(weights) {
        let mut s = 0.0;
        for &v in row {
            s += pow_q(v, q);
        }
        acc += w * s;
    }
    acc
}

/// `Σ w |ŷ − y|^q / Σ w |y|^q` for `q ∈ {1, 2}`; `weights` has one entry per
/// point and `ŷ`, `y` hold the point values row by row.
pub fn misfit(yhat: &[f64], y: &[f64], weights: &[f64], q: u32) -> Result<f64> {
    let m = components(yhat, y, weights)?;
    if q != 1 && q != 2 {
        return Err(LrnrError::invalid(format!("misfit exponent must be 1 or 2, got {q}")));
    }
    let denom = weighted_power(y, weights, q);
    if !(denom > 0.0) {
        return Err(LrnrError::invalid("misfit: reference has zero norm"));
    }
    let mut num = 0.0;
    for ((a, b), &w) in yhat.chunks_exact(m).zip(y.chunks_exact(m)).zip(weights) {
        let mut s = 0.0;
        for (p, r) in a.iter().zip(b) {
            s += pow_q(p - r, q);
        }
        num += w * s;
    }
    Ok(num / denom)
}

/// `α·misfit₁ + (1 − α)·misfit₂`.
pub fn misfit_blend(yhat: &[f64], y: &[f64], weights: &[f64], alpha: f64) -> Result<f64> {
    if alpha == 0.0 {
        misfit(yhat, y, weights, 2)
    } else if alpha == 1.0 {
        misfit(yhat, y, weights, 1)
    } else {
        Ok(alpha * misfit(yhat, y, weights, 1)? + (1.0 - alpha) * misfit(yhat, y, weights, 2)?)
    }
}

/// Value and `∂/∂ŷ` of the blended misfit. `sign(0) = 0` for the ℓ1 term.
pub(crate) fn misfit_blend_grad(yhat: &[f64], y: &[f64], weights: &[f64], alpha: f64, grad: &mut [f64]) -> Result<f64> {
    let m = components(yhat, y, weights)?;
    let value = misfit_blend(yhat, y, weights, alpha)?;
    grad.iter_mut().for_each(|g| *g = 0.0);
    for (q, coef) in [(1u32, alpha), (2u32, 1.0 - alpha)] {
        if coef == 0.0 {
            continue;
        }
        let scale = coef / weighted_power(y, weights, q);
        for (p, &w) in weights.iter().enumerate() {
            for c in 0..m {
                let i = p * m + c;
                let r = yhat[i] - y[i];
                let d = if q == 1 {
                    if r > 0.0 {
                        1.0
                    } else if r < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                } else {
                    2.0 * r
                };
                grad[i] += scale * w * d;
            }
        }
    }
    Ok(value)
}

fn block_sparse(block: &[f64], gamma: f64) -> f64 {
    block
        .windows(2)
        .map(|w| (gamma * w[1] - w[0]).max(0.0))
        .sum()
}

/// `Σ_blocks Σ_j (γ·s_{j+1} − s_j)₊`: zero exactly when every block decays at
/// least geometrically with ratio `1/γ`.
pub fn reg_sparse(s: &CoeffVector, gamma: f64) -> f64 {
    s.weight
        .iter()
        .chain(&s.bias)
        .map(|b| block_sparse(b, gamma))
        .sum()
}

/// Subgradient of `reg_sparse` with respect to the flattened coefficients,
/// accumulated into `grad` scaled by `scale`; blocks given as `(offset, len)`.
pub(crate) fn reg_sparse_grad(flat: &[f64], blocks: &[(usize, usize)], gamma: f64, scale: f64, grad: &mut [f64]) {
    for &(off, len) in blocks {
        for j in 0..len.saturating_sub(1) {
            let (a, b) = (off + j, off + j + 1);
            if gamma * flat[b] - flat[a] > 0.0 {
                grad[b] += scale * gamma;
                grad[a] -= scale;
            }
        }
    }
}

/// `‖MᵀM − I‖²_F / #M`, zero for matrices without columns.
pub(crate) fn gram_defect(m: &Matrix) -> f64 {
    if m.cols() == 0 || m.rows() == 0 {
        return 0.0;
    }
    let g = m.t_matmul(m).expect("Gram of a matrix with itself");
    let mut acc = 0.0;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let e = g[(i, j)] - if i == j { 1.0 } else { 0.0 };
            acc += e * e;
        }
    }
    acc / m.len() as f64
}

/// `4·M(MᵀM − I) / #M`, accumulated into `grad` with factor `scale`.
pub(crate) fn gram_defect_grad(m: &Matrix, scale: f64, grad: &mut Matrix) {
    if m.cols() == 0 || m.rows() == 0 {
        return;
    }
    let mut e = m.t_matmul(m).expect("Gram of a matrix with itself");
    let n = e.cols();
    for i in 0..n {
        e.as_mut_slice()[i * n + i] -= 1.0;
    }
    let d = m.matmul(&e).expect("conforming shapes");
    let f = 4.0 * scale / m.len() as f64;
    for (g, v) in grad.as_mut_slice().iter_mut().zip(d.as_slice()) {
        *g += f * v;
    }
}

pub fn reg_ortho(factors: &LrnrFactors) -> f64 {
    factors
        .u
        .iter()
        .chain(&factors.v)
        .chain(&factors.b)
        .map(gram_defect)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misfit_basics() {
        let y = [1.0, -2.0, 0.5];
        let w = [0.2, 0.3, 0.5];
        assert_eq!(misfit(&y, &y, &w, 2).unwrap(), 0.0);
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        assert!((misfit(&y2, &y, &w, 2).unwrap() - 1.0).abs() < 1e-15);
        assert!(misfit(&y, &[0.0; 3], &w, 2).is_err());
        assert!(misfit(&y, &y, &w, 3).is_err());
    }

    #[test]
    fn sparse_hand_cases() {
        let s = CoeffVector {
            weight: vec![vec![1.0, 1.0], vec![0.0, 1.0]],
            bias: vec![vec![7.0], vec![]],
        };
        assert_eq!(block_sparse(&s.weight[0], 1.0), 0.0);
        assert_eq!(reg_sparse(&s, 1.0), 1.0);
    }

    #[test]
    fn duplicated_column_gram() {
        let m = 5;
        let col = 1.0 / (m as f64).sqrt();
        let u = Matrix::from_fn(m, 2, |_, _| col);
        assert!((gram_defect(&u) - 2.0 / (2.0 * m as f64)).abs() < 1e-15);
    }
}
