//! Batched forward pass over snapshot points and the matching reverse pass.
//!
//! Per layer, with `Z` the `P × M_{ℓ−1}` layer input:
//!
//! ```text
//! A  = Z·V          A' = A·diag(s1)          Y = A'·Uᵀ + 1·βᵀ,  β = B·s2 (+ b_out)
//! ```
//!
//! The reverse pass propagates `G = ∂L/∂Y` into the factors, into `s1`, `s2`
//! and from there through the hypernetwork.

use crate::dataio::Snapshot;
use crate::error::{LrnrError, Result};
use crate::hypernet::{DenseLayer, HyperTrace, MetaModel};
use crate::lrnr::{CoeffVector, LrnrFactors};
use crate::numerics::matrix::{dot, gemm_acc, gemm_tn_acc};
use crate::numerics::Matrix;

use super::loss::{gram_defect_grad, misfit_blend, misfit_blend_grad, reg_ortho, reg_sparse, reg_sparse_grad};
use super::TrainConfig;

/// Gradients shaped like the trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub u: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub b: Vec<Matrix>,
    pub b_out: Vec<f64>,
    pub hyper: Vec<DenseLayer>,
}

impl GradientBundle {
    pub fn zeros_like(model: &MetaModel) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        GradientBundle {
            u: model.factors.u.iter().map(z).collect(),
            v: model.factors.v.iter().map(z).collect(),
            b: model.factors.b.iter().map(z).collect(),
            b_out: vec![0.0; model.factors.b_out.len()],
            hyper: model.hyper.zeros_like(),
        }
    }

    /// Named blocks in canonical parameter order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for l in 0..self.u.len() {
            out.push((format!("U[{l}]"), self.u[l].as_slice()));
            out.push((format!("V[{l}]"), self.v[l].as_slice()));
            out.push((format!("B[{l}]"), self.b[l].as_slice()));
        }
        out.push(("b_out".to_string(), self.b_out.as_slice()));
        for (k, layer) in self.hyper.iter().enumerate() {
            out.push((format!("hyper.W[{k}]"), layer.weight.as_slice()));
            out.push((format!("hyper.b[{k}]"), layer.bias.as_slice()));
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks().into_iter().flat_map(|(_, b)| b.iter().copied()).collect()
    }

    /// Error naming the first block holding a non-finite entry.
    pub fn check_finite(&self) -> Result<()> {
        for (name, block) in self.blocks() {
            if block.iter().any(|v| !v.is_finite()) {
                return Err(LrnrError::NonFiniteGradient { block: name });
            }
        }
        Ok(())
    }
}

/// Parameter names, block by block, in the order used by `params_to_vec`.
pub fn parameter_blocks(model: &MetaModel) -> Vec<(String, usize)> {
    GradientBundle::zeros_like(model)
        .blocks()
        .into_iter()
        .map(|(n, b)| (n, b.len()))
        .collect()
}

pub fn params_to_vec(model: &MetaModel) -> Vec<f64> {
    let f = &model.factors;
    let mut out = Vec::with_capacity(model.parameter_count());
    for l in 0..f.depth() {
        out.extend_from_slice(f.u[l].as_slice());
        out.extend_from_slice(f.v[l].as_slice());
        out.extend_from_slice(f.b[l].as_slice());
    }
    out.extend_from_slice(&f.b_out);
    for layer in &model.hyper.layers {
        out.extend_from_slice(layer.weight.as_slice());
        out.extend_from_slice(&layer.bias);
    }
    out
}

pub fn vec_to_params(model: &mut MetaModel, flat: &[f64]) -> Result<()> {
    if flat.len() != model.parameter_count() {
        return Err(LrnrError::ShapeMismatch(format!(
            "{} values for {} parameters",
            flat.len(),
            model.parameter_count()
        )));
    }
    let mut off = 0;
    let mut fill = |dst: &mut [f64]| {
        dst.copy_from_slice(&flat[off..off + dst.len()]);
        off += dst.len();
    };
    let f = &mut model.factors;
    for l in 0..f.depth() {
        fill(f.u[l].as_mut_slice());
        fill(f.v[l].as_mut_slice());
        fill(f.b[l].as_mut_slice());
    }
    fill(&mut f.b_out);
    for layer in &mut model.hyper.layers {
        fill(layer.weight.as_mut_slice());
        fill(&mut layer.bias);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub misfit: f64,
    pub sparse: f64,
    pub ortho: f64,
    pub total: f64,
}

struct LayerCache {
    z_in: Vec<f64>,
    a: Vec<f64>,
    a_scaled: Vec<f64>,
    y: Vec<f64>,
}

/// Forward pass over all points of one snapshot; returns the `P × m` output
/// and, if requested, the per-layer caches.
fn batched_forward(
    factors: &LrnrFactors,
    s: &CoeffVector,
    points: &Matrix,
    keep: bool,
) -> Result<(Vec<f64>, Vec<LayerCache>)> {
    let p = points.rows();
    let depth = factors.depth();
    let mut caches = Vec::with_capacity(if keep { depth } else { 0 });
    let mut z = points.as_slice().to_vec();
    for l in 0..depth {
        let (m_prev, m) = (factors.widths[l], factors.widths[l + 1]);
        let r = s.weight[l].len();
        let vt = factors.v[l].transpose();
        let ut = factors.u[l].transpose();
        let mut a = vec![0.0; p * r];
        for i in 0..p {
            let zi = &z[i * m_prev..(i + 1) * m_prev];
            for k in 0..r {
                a[i * r + k] = dot(zi, vt.row(k));
            }
        }
        let mut a_scaled = a.clone();
        for row in a_scaled.chunks_exact_mut(r) {
            for (v, sk) in row.iter_mut().zip(&s.weight[l]) {
                *v *= sk;
            }
        }
        let mut beta = factors.b[l].matvec(&s.bias[l])?;
        if l + 1 == depth {
            for (b, o) in beta.iter_mut().zip(&factors.b_out) {
                *b += o;
            }
        }
        let mut y = Vec::with_capacity(p * m);
        for _ in 0..p {
            y.extend_from_slice(&beta);
        }
        gemm_acc(&a_scaled, ut.as_slice(), &mut y, p, r, m);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LrnrError::NumericOverflow { layer: l });
        }
        let next = if l + 1 < depth {
            let act = factors.activation;
            y.iter().map(|&v| act.apply(v)).collect()
        } else {
            Vec::new()
        };
        if keep {
            caches.push(LayerCache {
                z_in: std::mem::replace(&mut z, next),
                a,
                a_scaled,
                y: if l + 1 == depth { Vec::new() } else { y.clone() },
            });
            if l + 1 == depth {
                return Ok((y, caches));
            }
        } else if l + 1 == depth {
            return Ok((y, caches));
        } else {
            z = next;
        }
    }
    unreachable!("depth is at least 2")
}

/// Network output for every point of a snapshot at coefficients `s`, row by row.
pub fn snapshot_output(factors: &LrnrFactors, s: &CoeffVector, points: &Matrix) -> Result<Vec<f64>> {
    Ok(batched_forward(factors, s, points, false)?.0)
}

/// Mean blended misfit plus regularizers over a batch of snapshots.
pub fn total_loss(model: &MetaModel, batch: &[&Snapshot], config: &TrainConfig, alpha: f64) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(LrnrError::invalid("empty batch"));
    }
    let nb = batch.len() as f64;
    let mut out = LossBreakdown::default();
    for snap in batch {
        let s = model.coefficients(snap.time)?;
        let yhat = snapshot_output(&model.factors, &s, &snap.points)?;
        out.misfit += misfit_blend(&yhat, snap.values.as_slice(), &snap.weights, alpha)?;
        out.sparse += reg_sparse(&s, config.gamma);
    }
    out.misfit /= nb;
    out.sparse /= nb;
    out.ortho = reg_ortho(&model.factors);
    out.total = out.misfit + config.lambda_sparse * out.sparse + config.lambda_ortho * out.ortho;
    Ok(out)
}

/// Loss and its gradient with respect to every trainable parameter.
pub fn backprop(
    model: &MetaModel,
    batch: &[&Snapshot],
    config: &TrainConfig,
    alpha: f64,
) -> Result<(LossBreakdown, GradientBundle)> {
    if batch.is_empty() {
        return Err(LrnrError::invalid("empty batch"));
    }
    let factors = &model.factors;
    let ranks = factors.rank_spec();
    let blocks = ranks.blocks();
    let depth = factors.depth();
    let nb = batch.len() as f64;
    let mut grads = GradientBundle::zeros_like(model);
    let mut loss = LossBreakdown::default();
    let uts: Vec<Matrix> = factors.u.iter().map(Matrix::transpose).collect();
    let vts: Vec<Matrix> = factors.v.iter().map(Matrix::transpose).collect();

    for snap in batch {
        let trace: HyperTrace = model.hyper.trace(model.normalizer.normalize(snap.time));
        let flat_s = &trace.output;
        if flat_s.iter().any(|v| !v.is_finite()) {
            return Err(LrnrError::invalid("hypernetwork produced a non-finite coefficient"));
        }
        let s = CoeffVector::unflatten(&ranks, flat_s)?;
        let p = snap.points.rows();
        let (yhat, caches) = batched_forward(factors, &s, &snap.points, true)?;

        let mut g = vec![0.0; yhat.len()];
        loss.misfit += misfit_blend_grad(&yhat, snap.values.as_slice(), &snap.weights, alpha, &mut g)?;
        loss.sparse += reg_sparse(&s, config.gamma);
        for v in &mut g {
            *v /= nb;
        }

        let mut g_s = vec![0.0; ranks.total()];
        for l in (0..depth).rev() {
            let (m_prev, m) = (factors.widths[l], factors.widths[l + 1]);
            let r1 = ranks.weight[l];
            let c = &caches[l];

            let mut g_beta = vec![0.0; m];
            for row in g.chunks_exact(m) {
                for (acc, v) in g_beta.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            if l + 1 == depth {
                for (acc, v) in grads.b_out.iter_mut().zip(&g_beta) {
                    *acc += v;
                }
            }
            let s2 = &s.bias[l];
            let b_off = ranks.bias_offset(l);
            for (i, &gb) in g_beta.iter().enumerate() {
                let brow = factors.b[l].row(i);
                for (k, &sk) in s2.iter().enumerate() {
                    grads.b[l].row_mut(i)[k] += gb * sk;
                    g_s[b_off + k] += brow[k] * gb;
                }
            }

            // ∂U: Σ_p G[p, i]·A'[p, k], built transposed then added.
            let mut g_ut = vec![0.0; r1 * m];
            gemm_tn_acc(&c.a_scaled, &g, &mut g_ut, p, r1, m);
            for k in 0..r1 {
                for i in 0..m {
                    grads.u[l].row_mut(i)[k] += g_ut[k * m + i];
                }
            }

            // G_{A'} = G·U, then ∂s1 and G_A.
            let mut g_a = vec![0.0; p * r1];
            for i in 0..p {
                let gi = &g[i * m..(i + 1) * m];
                for k in 0..r1 {
                    g_a[i * r1 + k] = dot(gi, uts[l].row(k));
                }
            }
            let w_off = ranks.weight_offset(l);
            for i in 0..p {
                for k in 0..r1 {
                    g_s[w_off + k] += g_a[i * r1 + k] * c.a[i * r1 + k];
                    g_a[i * r1 + k] *= s.weight[l][k];
                }
            }

            let mut g_vt = vec![0.0; r1 * m_prev];
            gemm_tn_acc(&g_a, &c.z_in, &mut g_vt, p, r1, m_prev);
            for k in 0..r1 {
                for i in 0..m_prev {
                    grads.v[l].row_mut(i)[k] += g_vt[k * m_prev + i];
                }
            }

            if l > 0 {
                let mut g_z = vec![0.0; p * m_prev];
                gemm_acc(&g_a, vts[l].as_slice(), &mut g_z, p, r1, m_prev);
                let act = factors.activation;
                for (gz, &y) in g_z.iter_mut().zip(&caches[l - 1].y) {
                    *gz *= act.derivative(y);
                }
                g = g_z;
            }
        }

        reg_sparse_grad(flat_s, &blocks, config.gamma, config.lambda_sparse / nb, &mut g_s);
        model.hyper.backward(&trace, &g_s, &mut grads.hyper);
    }

    loss.misfit /= nb;
    loss.sparse /= nb;
    loss.ortho = reg_ortho(factors);
    loss.total = loss.misfit + config.lambda_sparse * loss.sparse + config.lambda_ortho * loss.ortho;
    if config.lambda_ortho != 0.0 {
        for l in 0..depth {
            gram_defect_grad(&factors.u[l], config.lambda_ortho, &mut grads.u[l]);
            gram_defect_grad(&factors.v[l], config.lambda_ortho, &mut grads.v[l]);
            gram_defect_grad(&factors.b[l], config.lambda_ortho, &mut grads.b[l]);
        }
    }
    grads.check_finite()?;
    if !loss.total.is_finite() {
        return Err(LrnrError::NonFiniteGradient { block: "loss".into() });
    }
    Ok((loss, grads))
}
