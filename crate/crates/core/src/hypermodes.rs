//! Proper orthogonal decomposition of coefficient trajectories.
//!
//! The snapshot matrix `S` stacks `f_hyper(t_k)` as columns; its left singular
//! vectors are the hypermodes `φ_i`, its right singular vectors the temporal
//! modes. Projecting onto the leading `r̄` hypermodes gives the reduced
//! hypernetwork, and moving along a single hypermode gives tangent
//! perturbations and extrapolations of the learned dynamics.

use serde::{Deserialize, Serialize};

use crate::error::{LrnrError, Result};
use crate::hypernet::MetaModel;
use crate::lrnr::{forward, CoeffVector, LrnrFactors, RankSpec};
use crate::numerics::poly::normalize_abscissa;
use crate::numerics::{poly_fit, thin_svd, ChebyshevFit, Matrix};

pub const DEFAULT_ENERGY_TOL: f64 = 1e-8;
pub const DEFAULT_AMPLITUDE_THRESHOLD: f64 = 5e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypermodeBasis {
    /// `n × k` hypermodes.
    pub phi: Matrix,
    pub singular_values: Vec<f64>,
    /// `N × k` temporal modes.
    pub psi: Matrix,
    /// Truncation rank `r̄`.
    pub rank: usize,
    pub times: Vec<f64>,
    pub energy_tol: f64,
}

impl HypermodeBasis {
    /// The first `r̄` hypermodes.
    pub fn leading(&self) -> Matrix {
        self.phi.first_columns(self.rank)
    }

    pub fn with_rank(&self, rank: usize) -> Result<Self> {
        if rank == 0 || rank > self.singular_values.len() {
            return Err(LrnrError::invalid(format!(
                "rank {rank} outside 1..={}",
                self.singular_values.len()
            )));
        }
        Ok(HypermodeBasis {
            rank,
            ..self.clone()
        })
    }
}

/// Column `k` is the flattened coefficient vector at `times[k]`.
pub fn coeff_snapshots(model: &MetaModel, times: &[f64]) -> Result<Matrix> {
    if times.len() < 2 {
        return Err(LrnrError::invalid("coefficient snapshots need at least two times"));
    }
    let cols = times
        .iter()
        .map(|&t| Ok(model.coefficients(t)?.flatten()))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_columns(model.ranks().total(), &cols)
}

/// Smallest `k` with `Σ_{i≤k} σ_i² ≥ (1 − tol)·Σ σ_i²` (at least 1).
pub fn energy_rank(singular_values: &[f64], tol: f64) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 1.min(singular_values.len());
    }
    let mut acc = 0.0;
    for (k, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc >= (1.0 - tol) * total {
            return k + 1;
        }
    }
    singular_values.len()
}

pub fn compute_hypermodes(s: &Matrix, times: &[f64], energy_tol: f64) -> Result<HypermodeBasis> {
    if times.len() != s.cols() {
        return Err(LrnrError::ShapeMismatch(format!(
            "{} times for {} snapshot columns",
            times.len(),
            s.cols()
        )));
    }
    if !(0.0..1.0).contains(&energy_tol) {
        return Err(LrnrError::invalid("energy tolerance must lie in [0, 1)"));
    }
    let svd = thin_svd(s)?;
    let rank = energy_rank(&svd.singular_values, energy_tol);
    Ok(HypermodeBasis {
        phi: svd.left,
        singular_values: svd.singular_values,
        psi: svd.right,
        rank,
        times: times.to_vec(),
        energy_tol,
    })
}

/// Ranks kept per coefficient block after amplitude thresholding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub weight: Vec<usize>,
    pub bias: Vec<usize>,
    /// Singular values of the normalized snapshot matrix with `σ_i/σ_1 ≥ threshold`.
    pub hypermodes: usize,
    pub threshold: f64,
}

/// Normalize `S` to unit max-magnitude; a coefficient index is kept when its
/// largest magnitude over time reaches `threshold`. Kept ranks count the kept
/// indices of each block.
pub fn truncate_coeffs(s: &Matrix, ranks: &RankSpec, threshold: f64) -> Result<TruncationReport> {
    if s.rows() != ranks.total() {
        return Err(LrnrError::ShapeMismatch(format!(
            "{} snapshot rows for n = {}",
            s.rows(),
            ranks.total()
        )));
    }
    let scale = s.max_abs();
    if !(scale > 0.0) {
        return Err(LrnrError::invalid("truncation of an all-zero snapshot matrix"));
    }
    let row_max: Vec<f64> = (0..s.rows())
        .map(|i| s.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale)
        .collect();
    let kept = |off: usize, len: usize| row_max[off..off + len].iter().filter(|&&m| m >= threshold).count();
    let weight = (0..ranks.depth()).map(|l| kept(ranks.weight_offset(l), ranks.weight[l])).collect();
    let bias = (0..ranks.depth()).map(|l| kept(ranks.bias_offset(l), ranks.bias[l])).collect();
    let sigma = thin_svd(&s.scale(1.0 / scale))?.singular_values;
    let hypermodes = sigma.iter().filter(|&&v| v >= threshold * sigma[0]).count();
    Ok(TruncationReport {
        weight,
        bias,
        hypermodes,
        threshold,
    })
}

/// `Φ̂ Φ̂ᵀ s`.
pub fn project(basis: &HypermodeBasis, flat: &[f64]) -> Result<Vec<f64>> {
    let phi = basis.leading();
    let c = phi.t_matvec(flat)?;
    phi.matvec(&c)
}

pub fn reduced_hyper_forward(model: &MetaModel, basis: &HypermodeBasis, t: f64) -> Result<CoeffVector> {
    let raw = model.coefficients(t)?.flatten();
    CoeffVector::unflatten(&model.ranks(), &project(basis, &raw)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypermodeCoords {
    pub c: Vec<f64>,
    pub dc: Option<Vec<f64>>,
}

fn coords_at(model: &MetaModel, phi: &Matrix, t: f64) -> Result<Vec<f64>> {
    phi.t_matvec(&model.coefficients(t)?.flatten())
}

/// `c(t) = Φ̂ᵀ f_hyper(t)` and optionally `c′(t)` by central differences with
/// step `(T − t0)/1000`.
pub fn hypermode_coords(model: &MetaModel, basis: &HypermodeBasis, t: f64, derivative: bool) -> Result<HypermodeCoords> {
    let phi = basis.leading();
    let c = coords_at(model, &phi, t)?;
    let dc = if derivative {
        let h = model.normalizer.span() / 1000.0;
        Some(central_difference(model, &phi, t, h)?)
    } else {
        None
    };
    Ok(HypermodeCoords { c, dc })
}

pub(crate) fn central_difference(model: &MetaModel, phi: &Matrix, t: f64, h: f64) -> Result<Vec<f64>> {
    let plus = coords_at(model, phi, t + h)?;
    let minus = coords_at(model, phi, t - h)?;
    Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect())
}

/// A fixed coefficient vector paired with the factors it drives.
#[derive(Clone, Debug)]
pub struct FieldSampler<'a> {
    pub factors: &'a LrnrFactors,
    pub coeffs: CoeffVector,
}

impl FieldSampler<'_> {
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        forward(self.factors, &self.coeffs, x)
    }
}

fn check_mode(basis: &HypermodeBasis, mode: usize) -> Result<()> {
    if mode >= basis.rank {
        return Err(LrnrError::invalid(format!(
            "hypermode index {mode} outside the {} retained modes",
            basis.rank
        )));
    }
    Ok(())
}

fn shifted<'a>(
    model: &'a MetaModel,
    basis: &HypermodeBasis,
    coords: &HypermodeCoords,
    mode: usize,
    step: f64,
) -> Result<FieldSampler<'a>> {
    let phi = basis.leading();
    let mut flat = phi.matvec(&coords.c)?;
    for (i, f) in flat.iter_mut().enumerate() {
        *f += step * phi[(i, mode)];
    }
    Ok(FieldSampler {
        factors: &model.factors,
        coeffs: CoeffVector::unflatten(&model.ranks(), &flat)?,
    })
}

/// Field at coefficients `Φ̂ c(t) + η φ_mode` (0-based `mode`).
pub fn perturb_tangent<'a>(
    model: &'a MetaModel,
    basis: &HypermodeBasis,
    t: f64,
    mode: usize,
    eta: f64,
) -> Result<FieldSampler<'a>> {
    check_mode(basis, mode)?;
    let coords = hypermode_coords(model, basis, t, false)?;
    shifted(model, basis, &coords, mode, eta)
}

/// Field at coefficients `Φ̂ c(t) + η φ_mode c′_mode(t)`.
pub fn extrapolate_hypermode<'a>(
    model: &'a MetaModel,
    basis: &HypermodeBasis,
    t: f64,
    mode: usize,
    eta: f64,
) -> Result<FieldSampler<'a>> {
    check_mode(basis, mode)?;
    let coords = hypermode_coords(model, basis, t, true)?;
    let rate = coords.dc.as_ref().expect("derivative requested")[mode];
    shifted(model, basis, &coords, mode, eta * rate)
}

/// `η` rescaled by `‖c(t)‖` so perturbations are comparable across times.
pub fn normalized_eta(model: &MetaModel, basis: &HypermodeBasis, t: f64, eta: f64) -> Result<f64> {
    let c = hypermode_coords(model, basis, t, false)?.c;
    Ok(eta * c.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Chebyshev fit of each retained temporal mode over the sample times mapped to `[−1, 1]`.
pub fn fit_temporal_modes(basis: &HypermodeBasis, degree: usize) -> Result<Vec<ChebyshevFit>> {
    let lo = basis.times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = basis.times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t: Vec<f64> = basis.times.iter().map(|&v| normalize_abscissa(v, lo, hi)).collect();
    (0..basis.rank).map(|i| poly_fit(&t, &basis.psi.column(i), degree)).collect()
}

/// Layer weights and bias assembled from hypermode coordinates through the
/// third-order expansion `W = Σ_i c_i U diag(φ_i^{(ℓ,1)}) Vᵀ`, `b = Σ_i c_i B φ_i^{(ℓ,2)}`.
pub fn assemble_from_coords(
    factors: &LrnrFactors,
    basis: &HypermodeBasis,
    c: &[f64],
    layer: usize,
) -> Result<(Matrix, Vec<f64>)> {
    let ranks = factors.rank_spec();
    if c.len() != basis.rank || layer >= factors.depth() {
        return Err(LrnrError::invalid("coordinate length or layer index out of range"));
    }
    let (m, m_prev) = (factors.widths[layer + 1], factors.widths[layer]);
    let mut weight = Matrix::zeros(m, m_prev);
    let mut bias = vec![0.0; m];
    let vt = factors.v[layer].transpose();
    let (w_off, b_off) = (ranks.weight_offset(layer), ranks.bias_offset(layer));
    for (i, &ci) in c.iter().enumerate() {
        let s1: Vec<f64> = (0..ranks.weight[layer]).map(|k| basis.phi[(w_off + k, i)]).collect();
        let term = factors.u[layer].scale_columns(&s1).matmul(&vt)?;
        for (w, v) in weight.as_mut_slice().iter_mut().zip(term.as_slice()) {
            *w += ci * v;
        }
        let s2: Vec<f64> = (0..ranks.bias[layer]).map(|k| basis.phi[(b_off + k, i)]).collect();
        for (b, v) in bias.iter_mut().zip(factors.b[layer].matvec(&s2)?) {
            *b += ci * v;
        }
    }
    if layer + 1 == factors.depth() {
        for (b, o) in bias.iter_mut().zip(&factors.b_out) {
            *b += o;
        }
    }
    Ok((weight, bias))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_rank_counts() {
        assert_eq!(energy_rank(&[1.0, 0.0, 0.0], 1e-12), 1);
        assert_eq!(energy_rank(&[3.0, 4.0], 0.5), 2);
        assert_eq!(energy_rank(&[4.0, 3.0], 0.5), 1);
    }

    #[test]
    fn truncation_by_amplitude() {
        let ranks = RankSpec::new(vec![2, 1], vec![1, 0]).unwrap();
        let s = Matrix::from_rows(&[
            vec![1.0, 0.5],
            vec![1e-6, -1e-6],
            vec![0.3, 0.2],
            vec![-0.1, 0.0],
        ])
        .unwrap();
        let r = truncate_coeffs(&s, &ranks, DEFAULT_AMPLITUDE_THRESHOLD).unwrap();
        assert_eq!(r.weight, vec![1, 1]);
        assert_eq!(r.bias, vec![1, 0]);
        assert!(truncate_coeffs(&Matrix::zeros(4, 2), &ranks, 5e-5).is_err());
    }
}
