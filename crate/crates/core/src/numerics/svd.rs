//! Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! Columns of a working copy of `A` are orthogonalized pairwise while the same
//! rotations accumulate into `V`. On convergence the column norms are the
//! singular values and the normalized columns are the left singular vectors.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{LrnrError, Result};

const MAX_SWEEPS: usize = 80;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvdResult {
    /// `m × k` with orthonormal columns, `k = min(m, n)`.
    pub left: Matrix,
    /// Nonincreasing, nonnegative.
    pub singular_values: Vec<f64>,
    /// `n × k` with orthonormal columns.
    pub right: Matrix,
}

impl SvdResult {
    /// `left[:, ..k] · diag(σ[..k]) · right[:, ..k]ᵀ`.
    pub fn reconstruct(&self, k: usize) -> Matrix {
        let k = k.min(self.singular_values.len());
        let m = self.left.rows();
        let n = self.right.rows();
        let mut out = Matrix::zeros(m, n);
        for p in 0..k {
            let s = self.singular_values[p];
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let a = self.left[(i, p)] * s;
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * self.right[(j, p)];
                }
            }
        }
        out
    }

    /// Number of singular values with `σ_i / σ_1 ≥ rel_tol`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let s0 = match self.singular_values.first() {
            Some(&s) if s > 0.0 => s,
            _ => return 0,
        };
        self.singular_values
            .iter()
            .take_while(|&&s| s / s0 >= rel_tol)
            .count()
    }
}

pub fn thin_svd(a: &Matrix) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(LrnrError::invalid("thin_svd: non-finite entry"));
    }
    if a.rows() == 0 || a.cols() == 0 {
        return Err(LrnrError::invalid("thin_svd: empty matrix"));
    }
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose())?;
        Ok(SvdResult {
            left: t.right,
            singular_values: t.singular_values,
            right: t.left,
        })
    }
}

fn jacobi_tall(a: &Matrix) -> Result<SvdResult> {
    let m = a.rows();
    let n = a.cols();
    // Column-major working storage.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * (m as f64).sqrt();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (&w[p], &w[q]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for i in 0..m {
                        al += wp[i] * wp[i];
                        be += wq[i] * wq[i];
                        ga += wp[i] * wq[i];
                    }
                    (al, be, ga)
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LrnrError::invalid(
            "thin_svd: Jacobi sweeps did not converge",
        ));
    }

    let mut order: Vec<(usize, f64)> = w
        .iter()
        .enumerate()
        .map(|(j, col)| (j, col.iter().map(|x| x * x).sum::<f64>().sqrt()))
        .collect();
    // Stable sort keeps the original column order among ties.
    order.sort_by(|x, y| y.1.partial_cmp(&x.1).expect("finite norms"));

    let smax = order.first().map_or(0.0, |o| o.1);
    let zero_tol = smax * f64::EPSILON * (m.max(n) as f64);
    let mut left = Matrix::zeros(m, n);
    let mut right = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (k, &(j, s)) in order.iter().enumerate() {
        sigma.push(s);
        right.set_column(k, &v[j]);
        if s > zero_tol && s > 0.0 {
            let col: Vec<f64> = w[j].iter().map(|x| x / s).collect();
            left.set_column(k, &col);
        } else {
            deficient.push(k);
        }
    }
    if !deficient.is_empty() {
        complete_orthonormal(&mut left, &deficient);
    }
    Ok(SvdResult {
        left,
        singular_values: sigma,
        right,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fill the listed columns with unit vectors orthogonal to all other columns.
fn complete_orthonormal(q: &mut Matrix, missing: &[usize]) {
    let m = q.rows();
    let mut filled: Vec<usize> = (0..q.cols()).filter(|j| !missing.contains(j)).collect();
    let mut candidate = 0usize;
    for &k in missing {
        loop {
            assert!(candidate < m, "cannot complete orthonormal basis");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of Gram-Schmidt.
            for _ in 0..2 {
                for &j in &filled {
                    let proj: f64 = (0..m).map(|i| q[(i, j)] * e[i]).sum();
                    for (i, ei) in e.iter_mut().enumerate() {
                        *ei -= proj * q[(i, j)];
                    }
                }
            }
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for (i, ei) in e.iter().enumerate() {
                    q[(i, k)] = ei / norm;
                }
                filled.push(k);
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_case() {
        let a = Matrix::diag(&[3.0, 2.0]);
        let svd = thin_svd(&a).unwrap();
        assert_eq!(svd.singular_values, vec![3.0, 2.0]);
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((svd.left[(i, j)].abs() - e).abs() < 1e-15);
                assert!((svd.right[(i, j)].abs() - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rank_one_norm_product() {
        let u = [2.0 / 3.0_f64.sqrt(); 3];
        let v = [0.0, 3.0, 0.0, 0.0];
        let a = Matrix::from_fn(3, 4, |i, j| u[i] * v[j]);
        let svd = thin_svd(&a).unwrap();
        assert!((svd.singular_values[0] - 6.0).abs() < 1e-12);
        for s in &svd.singular_values[1..] {
            assert!(s.abs() < 1e-12);
        }
        assert!(svd.left.orthonormality_defect() < 1e-10);
        assert!(svd.right.orthonormality_defect() < 1e-10);
    }

    #[test]
    fn wide_matrix_uses_transpose() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -1.0, 2.0, 0.0]]).unwrap();
        let svd = thin_svd(&a).unwrap();
        assert_eq!(svd.left.shape(), (2, 2));
        assert_eq!(svd.right.shape(), (4, 2));
        let err = svd.reconstruct(2).sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
        assert!(err < 1e-14);
    }

    #[test]
    fn rejects_non_finite() {
        let a = Matrix::from_rows(&[vec![1.0, f64::NAN]]).unwrap();
        assert!(matches!(thin_svd(&a), Err(LrnrError::InvalidInput(_))));
    }

    #[test]
    fn zero_matrix_gives_orthonormal_factors() {
        let svd = thin_svd(&Matrix::zeros(4, 3)).unwrap();
        assert!(svd.singular_values.iter().all(|&s| s == 0.0));
        assert!(svd.left.orthonormality_defect() < 1e-12);
    }
}
