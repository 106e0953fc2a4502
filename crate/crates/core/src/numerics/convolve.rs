//! Box-kernel mollification of fields sampled on uniform grids.
//!
//! Samples are treated as cell averages: sample `j` owns the cell
//! `[x_j − h/2, x_j + h/2]`. The output at each sample is the exact mean of that
//! piecewise-constant reconstruction over `[x − w, x + w]` in every coordinate,
//! i.e. `(χ_w ∗ u)` with `χ_w = (2w)^{-d} 1_{[−w,w]^d}`.

use serde::{Deserialize, Serialize};

use crate::error::{LrnrError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Periodic,
    ConstantExtension,
}

/// Shape and spacing of a 1d or 2d uniform grid; values are row-major with the
/// last axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub counts: Vec<usize>,
    pub spacing: Vec<f64>,
}

impl GridShape {
    pub fn new_1d(n: usize, h: f64) -> Self {
        GridShape {
            counts: vec![n],
            spacing: vec![h],
        }
    }

    pub fn new_2d(n0: usize, n1: usize, h0: f64, h1: f64) -> Self {
        GridShape {
            counts: vec![n0, n1],
            spacing: vec![h0, h1],
        }
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Offsets and weights of the 1d kernel restricted to whole cells.
fn kernel_weights(radius: f64, h: f64) -> Vec<(isize, f64)> {
    let reach = (radius / h + 0.5).ceil() as isize;
    let mut out = Vec::new();
    for k in -reach..=reach {
        let lo = (k as f64 * h - 0.5 * h).max(-radius);
        let hi = (k as f64 * h + 0.5 * h).min(radius);
        if hi > lo {
            out.push((k, (hi - lo) / (2.0 * radius)));
        }
    }
    out
}

pub fn box_convolve(
    values: &[f64],
    grid: &GridShape,
    radius: f64,
    boundary: Boundary,
) -> Result<Vec<f64>> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(LrnrError::invalid(format!(
            "box_convolve: radius must be finite and nonnegative, got {radius}"
        )));
    }
    if grid.counts.is_empty() || grid.counts.len() > 2 || grid.counts.len() != grid.spacing.len() {
        return Err(LrnrError::invalid("box_convolve: expected a 1d or 2d grid"));
    }
    if values.len() != grid.len() {
        return Err(LrnrError::ShapeMismatch(format!(
            "box_convolve: {} values on a grid of {} points",
            values.len(),
            grid.len()
        )));
    }
    if grid.spacing.iter().any(|h| !(*h > 0.0)) {
        return Err(LrnrError::invalid("box_convolve: grid spacing must be positive"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(LrnrError::invalid("box_convolve: non-finite value"));
    }
    if radius == 0.0 {
        return Ok(values.to_vec());
    }

    let mut current = values.to_vec();
    let dims = grid.counts.len();
    for axis in 0..dims {
        let n = grid.counts[axis];
        let stride: usize = grid.counts[axis + 1..].iter().product();
        let outer: usize = grid.counts[..axis].iter().product();
        let weights = kernel_weights(radius, grid.spacing[axis]);
        let mut next = vec![0.0; current.len()];
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for i in 0..n {
                    let mut acc = 0.0;
                    for &(k, wk) in &weights {
                        let j = i as isize + k;
                        let j = match boundary {
                            Boundary::Periodic => j.rem_euclid(n as isize) as usize,
                            Boundary::ConstantExtension => j.clamp(0, n as isize - 1) as usize,
                        };
                        acc += wk * current[base + j * stride];
                    }
                    next[base + i * stride] = acc;
                }
            }
        }
        current = next;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_radius_is_identity() {
        let v = vec![1.0, -2.0, 3.5, 0.25];
        let g = GridShape::new_1d(4, 0.1);
        assert_eq!(box_convolve(&v, &g, 0.0, Boundary::Periodic).unwrap(), v);
    }

    #[test]
    fn constant_field_unchanged() {
        let g = GridShape::new_2d(7, 5, 0.1, 0.2);
        let v = vec![2.5; g.len()];
        for b in [Boundary::Periodic, Boundary::ConstantExtension] {
            let out = box_convolve(&v, &g, 0.33, b).unwrap();
            for x in out {
                assert!((x - 2.5).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn weights_sum_to_one() {
        for (w, h) in [(0.1, 0.001), (0.05, 0.03), (0.3, 1.0), (2.0, 0.7)] {
            let s: f64 = kernel_weights(w, h).iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-13, "w={w} h={h} sum={s}");
        }
    }

    #[test]
    fn negative_radius_rejected() {
        let g = GridShape::new_1d(3, 0.1);
        assert!(box_convolve(&[0.0; 3], &g, -0.1, Boundary::Periodic).is_err());
    }
}
