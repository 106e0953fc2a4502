use super::matrix::Matrix;
use crate::error::{LrnrError, Result};

/// Systems whose 1-norm condition number exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// LU factorization with partial pivoting, `P·A = L·U` packed in place.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Lu> {
        let n = a.rows();
        if n != a.cols() {
            return Err(LrnrError::invalid(format!(
                "LU of non-square {}x{} matrix",
                a.rows(),
                a.cols()
            )));
        }
        if !a.is_finite() {
            return Err(LrnrError::invalid("LU: non-finite entry"));
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[(k, k)].abs();
            for i in (k + 1)..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best == 0.0 {
                return Err(LrnrError::Singular { cond: f64::INFINITY });
            }
            if piv != k {
                perm.swap(piv, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        let ukj = lu[(k, j)];
                        lu[(i, j)] -= f * ukj;
                    }
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc / self.lu[(i, i)];
        }
        x
    }

    pub fn solve(&self, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let x = self.solve_vec(&b.column(j));
            out.set_column(j, &x);
        }
        out
    }

    pub fn inverse(&self) -> Matrix {
        self.solve(&Matrix::identity(self.dim()))
    }
}

/// `κ₁(A) = ‖A‖₁ ‖A⁻¹‖₁`, computed from an explicit inverse.
pub fn condition_estimate(a: &Matrix) -> Result<f64> {
    let lu = Lu::factor(a)?;
    Ok(a.norm_1() * lu.inverse().norm_1())
}

/// Solve `a · x = b` for square, well-conditioned `a`.
pub fn solve_square(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(LrnrError::ShapeMismatch(format!(
            "solve_square: {}x{} system with {} right-hand-side rows",
            a.rows(),
            a.cols(),
            b.rows()
        )));
    }
    let lu = Lu::factor(a)?;
    let cond = a.norm_1() * lu.inverse().norm_1();
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(LrnrError::Singular { cond });
    }
    Ok(lu.solve(b))
}

/// Least-squares solution of an overdetermined full-rank system by Householder QR.
pub fn lstsq(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let m = a.rows();
    let n = a.cols();
    if m < n || b.len() != m {
        return Err(LrnrError::invalid(format!(
            "lstsq: {m}x{n} system with {} right-hand-side entries",
            b.len()
        )));
    }
    let mut r = a.clone();
    let mut y = b.to_vec();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let norm = (k..m).map(|i| r[(i, k)] * r[(i, k)]).sum::<f64>().sqrt();
        if norm <= scale * 1e-13 {
            return Err(LrnrError::invalid("lstsq: rank-deficient system"));
        }
        let alpha = if r[(k, k)] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| r[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for j in k..n {
                let proj: f64 = v.iter().enumerate().map(|(t, vi)| vi * r[(k + t, j)]).sum();
                let f = 2.0 * proj / vnorm2;
                for (t, vi) in v.iter().enumerate() {
                    r[(k + t, j)] -= f * vi;
                }
            }
            let proj: f64 = v.iter().enumerate().map(|(t, vi)| vi * y[k + t]).sum();
            let f = 2.0 * proj / vnorm2;
            for (t, vi) in v.iter().enumerate() {
                y[k + t] -= f * vi;
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = y[i];
        for j in (i + 1)..n {
            acc -= r[(i, j)] * x[j];
        }
        x[i] = acc / r[(i, i)];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_rhs() {
        let b = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let x = solve_square(&Matrix::identity(2), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn diagonal_system() {
        let a = Matrix::diag(&[2.0, 4.0]);
        let b = Matrix::from_rows(&[vec![2.0], vec![4.0]]).unwrap();
        let x = solve_square(&a, &b).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn singular_system_reports_condition() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        match solve_square(&a, &b) {
            Err(LrnrError::Singular { cond }) => assert!(cond > MAX_CONDITION),
            other => panic!("expected singular error, got {other:?}"),
        }
        let nearly = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0 + 1e-14]]).unwrap();
        assert!(matches!(
            solve_square(&nearly, &b),
            Err(LrnrError::Singular { .. })
        ));
    }

    #[test]
    fn lstsq_exact_fit() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let x = lstsq(&a, &[1.0, 3.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }
}
