//! FastLRNR: hidden states restricted to empirical bases and sampled at
//! interpolation rows, so point evaluation costs depend on ranks only.
//!
//! For hidden layer `ℓ` with basis `Ξ` and interpolation rows `P`:
//!
//! ```text
//! Û[ℓ] = PᵀU[ℓ]     B̂[ℓ] = PᵀB[ℓ]     V̂[ℓ+1]ᵀ = V[ℓ+1]ᵀ Ξ (PᵀΞ)⁻¹
//! ```
//!
//! The first layer keeps `V[0]` (its input is the point itself) and the last
//! layer keeps the full `U`, `B` and `b_out` (its rows are the outputs).

use serde::{Deserialize, Serialize};

use crate::error::{LrnrError, Result};
use crate::hypermodes::{project, HypermodeBasis};
use crate::hypernet::MetaModel;
use crate::lrnr::{forward_counted, forward_trace, lowrank_affine, Activation, CoeffVector, OpCount, RankSpec};
use crate::numerics::solve::{condition_estimate, solve_square};
use crate::numerics::{thin_svd, Matrix};

pub const DEFAULT_BASIS_TOL: f64 = 1e-8;
/// Interpolation matrices with a larger condition estimate are flagged.
pub const CONDITION_WARNING: f64 = 1e10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenBasis {
    /// `M × r̂` with orthonormal columns.
    pub xi: Matrix,
    /// Interpolation rows, one per basis column.
    pub indices: Vec<usize>,
    /// Condition estimate of `PᵀΞ`.
    pub condition: f64,
}

impl HiddenBasis {
    pub fn rank(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FastLayer {
    /// `Û`: rows are sampled outputs of the layer.
    pub u: Matrix,
    /// `V̂`: rows are sampled inputs of the layer.
    pub v: Matrix,
    pub b: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FastLrnrModel {
    pub layers: Vec<FastLayer>,
    pub b_out: Vec<f64>,
    pub activation: Activation,
    pub ranks: RankSpec,
    pub bases: Vec<HiddenBasis>,
    /// Anchor points the hidden snapshots were taken at.
    pub anchors: Vec<Vec<f64>>,
    /// Leading hypermodes `Φ̂` of the reduced hypernetwork, if any.
    pub projector: Option<Matrix>,
    pub warnings: Vec<String>,
}

/// Coefficients used for evaluation: raw, or projected onto the retained hypermodes.
fn coefficients(model: &MetaModel, projector: Option<&HypermodeBasis>, t: f64) -> Result<CoeffVector> {
    match projector {
        None => model.coefficients(t),
        Some(basis) => {
            let raw = model.coefficients(t)?.flatten();
            CoeffVector::unflatten(&model.ranks(), &project(basis, &raw)?)
        }
    }
}

/// `M × N` matrix of hidden states `z[layer]` at `x` (0-based hidden layer index).
pub fn hidden_snapshots(
    model: &MetaModel,
    x: &[f64],
    times: &[f64],
    layer: usize,
    projector: Option<&HypermodeBasis>,
) -> Result<Matrix> {
    if layer + 1 >= model.factors.depth() {
        return Err(LrnrError::invalid(format!("layer {layer} is not a hidden layer")));
    }
    if times.is_empty() {
        return Err(LrnrError::invalid("no snapshot times"));
    }
    let cols = times
        .iter()
        .map(|&t| {
            let s = coefficients(model, projector, t)?;
            Ok(forward_trace(&model.factors, &s, x)?.hidden[layer].clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_columns(model.factors.widths[layer + 1], &cols)
}

/// Left singular vectors with `σ_i/σ_1 ≥ tol`.
pub fn build_hidden_basis(z: &Matrix, tol: f64) -> Result<Matrix> {
    let svd = thin_svd(z)?;
    let rank = svd.numerical_rank(tol);
    if rank == 0 {
        return Err(LrnrError::invalid("hidden snapshot matrix is zero"));
    }
    Ok(svd.left.first_columns(rank))
}

/// Greedy DEIM row selection; ties go to the lowest index.
pub fn eim_select(xi: &Matrix) -> Result<Vec<usize>> {
    let (m, k) = xi.shape();
    if k == 0 || k > m {
        return Err(LrnrError::invalid(format!("cannot interpolate {k} columns on {m} rows")));
    }
    let argmax = |v: &[f64]| {
        let mut best = (0, v[0].abs());
        for (i, x) in v.iter().enumerate().skip(1) {
            if x.abs() > best.1 {
                best = (i, x.abs());
            }
        }
        best
    };
    let first = argmax(&xi.column(0));
    if first.1 == 0.0 {
        return Err(LrnrError::DegenerateBasis { step: 0 });
    }
    let mut indices = vec![first.0];
    for j in 1..k {
        let basis = xi.first_columns(j);
        let sampled = basis.select_rows(&indices);
        let target = xi.column(j);
        let rhs: Vec<f64> = indices.iter().map(|&i| target[i]).collect();
        let coef = solve_square(&sampled, &Matrix::from_vec(j, 1, rhs)?)
            .map_err(|_| LrnrError::DegenerateBasis { step: j })?;
        let fit = basis.matvec(coef.as_slice())?;
        let residual: Vec<f64> = target.iter().zip(&fit).map(|(a, b)| a - b).collect();
        let (idx, mag) = argmax(&residual);
        if mag == 0.0 || indices.contains(&idx) {
            return Err(LrnrError::DegenerateBasis { step: j });
        }
        indices.push(idx);
    }
    Ok(indices)
}

/// Options for `compress`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressOptions {
    pub tol: f64,
    /// Cap on every hidden basis rank (for rank sweeps).
    pub max_rank: Option<usize>,
}

impl Default for CompressOptions {
    fn default() -> Self {
        CompressOptions {
            tol: DEFAULT_BASIS_TOL,
            max_rank: None,
        }
    }
}

/// Build hidden bases from snapshots at `anchors` × `times` and assemble the
/// compressed factors.
pub fn compress(
    model: &MetaModel,
    anchors: &[Vec<f64>],
    times: &[f64],
    projector: Option<&HypermodeBasis>,
    options: &CompressOptions,
) -> Result<FastLrnrModel> {
    if anchors.is_empty() {
        return Err(LrnrError::invalid("compression needs at least one anchor point"));
    }
    let hidden = model.factors.depth() - 1;
    let mut bases = Vec::with_capacity(hidden);
    let mut warnings = Vec::new();
    for l in 0..hidden {
        let mut cols = Vec::new();
        for x in anchors {
            let z = hidden_snapshots(model, x, times, l, projector)?;
            cols.extend((0..z.cols()).map(|j| z.column(j)));
        }
        let z = Matrix::from_columns(model.factors.widths[l + 1], &cols)?;
        let mut xi = build_hidden_basis(&z, options.tol)?;
        if let Some(cap) = options.max_rank {
            if cap == 0 {
                return Err(LrnrError::invalid("rank cap must be positive"));
            }
            xi = xi.first_columns(cap.min(xi.cols()));
        }
        let indices = eim_select(&xi)?;
        let condition = condition_estimate(&xi.select_rows(&indices))?;
        if condition > CONDITION_WARNING {
            warnings.push(format!("hidden layer {l}: interpolation condition estimate {condition:e}"));
        }
        bases.push(HiddenBasis { xi, indices, condition });
    }
    assemble(model, bases, anchors, projector.map(HypermodeBasis::leading), warnings)
}

/// The uncompressed special case: `Ξ = I` and every row sampled in order.
pub fn compress_identity(model: &MetaModel) -> Result<FastLrnrModel> {
    let hidden = model.factors.depth() - 1;
    let bases = (0..hidden)
        .map(|l| {
            let m = model.factors.widths[l + 1];
            HiddenBasis {
                xi: Matrix::identity(m),
                indices: (0..m).collect(),
                condition: 1.0,
            }
        })
        .collect();
    assemble(model, bases, &[], None, Vec::new())
}

fn assemble(
    model: &MetaModel,
    bases: Vec<HiddenBasis>,
    anchors: &[Vec<f64>],
    projector: Option<Matrix>,
    warnings: Vec<String>,
) -> Result<FastLrnrModel> {
    let f = &model.factors;
    let depth = f.depth();
    let mut layers = Vec::with_capacity(depth);
    for l in 0..depth {
        let v = if l == 0 {
            f.v[0].clone()
        } else {
            let basis = &bases[l - 1];
            let sampled = basis.xi.select_rows(&basis.indices);
            solve_square(&sampled.transpose(), &basis.xi.t_matmul(&f.v[l])?)?
        };
        let (u, b) = if l + 1 == depth {
            (f.u[l].clone(), f.b[l].clone())
        } else {
            let idx = &bases[l].indices;
            (f.u[l].select_rows(idx), f.b[l].select_rows(idx))
        };
        layers.push(FastLayer { u, v, b });
    }
    Ok(FastLrnrModel {
        layers,
        b_out: f.b_out.clone(),
        activation: f.activation,
        ranks: f.rank_spec(),
        bases,
        anchors: anchors.to_vec(),
        projector,
        warnings,
    })
}

impl FastLrnrModel {
    pub fn hidden_ranks(&self) -> Vec<usize> {
        self.bases.iter().map(HiddenBasis::rank).collect()
    }

    /// Reduced coefficients for time `t` from the model's hypernetwork.
    pub fn coefficients(&self, model: &MetaModel, t: f64) -> Result<CoeffVector> {
        let raw = model.coefficients(t)?.flatten();
        let flat = match &self.projector {
            None => raw,
            Some(phi) => phi.matvec(&phi.t_matvec(&raw)?)?,
        };
        CoeffVector::unflatten(&self.ranks, &flat)
    }
}

/// Evaluate the compressed network at its anchor for coefficients `s`.
pub fn fast_forward(fast: &FastLrnrModel, s: &CoeffVector, x: &[f64], ops: &mut OpCount) -> Result<Vec<f64>> {
    if !s.matches(&fast.ranks) {
        return Err(LrnrError::invalid("coefficients do not match the compressed model"));
    }
    if x.len() != fast.layers[0].v.rows() {
        return Err(LrnrError::invalid("input dimension does not match the compressed model"));
    }
    let depth = fast.layers.len();
    let mut z = x.to_vec();
    for (l, layer) in fast.layers.iter().enumerate() {
        let mut y = lowrank_affine(&layer.u, &s.weight[l], &layer.v, &layer.b, &s.bias[l], &z, ops);
        if l + 1 == depth {
            for (yi, o) in y.iter_mut().zip(&fast.b_out) {
                *yi += o;
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(LrnrError::NumericOverflow { layer: l });
            }
            return Ok(y);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LrnrError::NumericOverflow { layer: l });
        }
        z = y.iter().map(|&v| fast.activation.apply(v)).collect();
    }
    unreachable!("depth is at least 2")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FastEvalReport {
    pub times: Vec<f64>,
    pub fast: Vec<Vec<f64>>,
    pub full: Vec<Vec<f64>>,
    /// `‖fast − full‖₂ / ‖full‖₂` over the whole series.
    pub rel_error: f64,
    /// Multiply-adds of one compressed evaluation.
    pub fast_ops: u64,
    /// Multiply-adds of one dense evaluation `Σ M[ℓ]·M[ℓ−1]`.
    pub full_ops: u64,
    /// Multiply-adds of one evaluation through the uncompressed low-rank factors.
    pub lowrank_ops: u64,
}

/// Multiply-adds of a dense forward pass with pre-assembled weights.
pub fn dense_op_count(widths: &[usize]) -> u64 {
    widths.windows(2).map(|w| (w[0] * w[1]) as u64).sum()
}

/// Compressed series at `x` against the full model driven by the raw hypernetwork.
pub fn fast_eval_series(fast: &FastLrnrModel, model: &MetaModel, x: &[f64], times: &[f64]) -> Result<FastEvalReport> {
    let mut report = FastEvalReport {
        times: times.to_vec(),
        fast: Vec::with_capacity(times.len()),
        full: Vec::with_capacity(times.len()),
        rel_error: 0.0,
        fast_ops: 0,
        full_ops: dense_op_count(&model.factors.widths),
        lowrank_ops: 0,
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for &t in times {
        let mut ops = OpCount::default();
        let y_fast = fast_forward(fast, &fast.coefficients(model, t)?, x, &mut ops)?;
        report.fast_ops = ops.mul_add;
        let mut full_ops = OpCount::default();
        let y_full = forward_counted(&model.factors, &model.coefficients(t)?, x, &mut full_ops)?;
        report.lowrank_ops = full_ops.mul_add;
        for (a, b) in y_fast.iter().zip(&y_full) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        report.fast.push(y_fast);
        report.full.push(y_full);
    }
    report.rel_error = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_column_argmax() {
        let xi = Matrix::from_rows(&[vec![0.1], vec![0.9], vec![0.3]]).unwrap();
        assert_eq!(eim_select(&xi).unwrap(), vec![1]);
    }

    #[test]
    fn identity_columns_pick_their_rows() {
        let xi = Matrix::from_columns(4, &[vec![0.0, 0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(eim_select(&xi).unwrap(), vec![2, 0]);
    }

    #[test]
    fn ties_prefer_lowest_index() {
        let xi = Matrix::from_rows(&[vec![0.5], vec![-0.5], vec![0.5]]).unwrap();
        assert_eq!(eim_select(&xi).unwrap(), vec![0]);
    }

    #[test]
    fn zero_column_is_degenerate() {
        let xi = Matrix::zeros(3, 1);
        assert!(matches!(eim_select(&xi), Err(LrnrError::DegenerateBasis { step: 0 })));
    }
}
