//! Low rank neural representations.
//!
//! Layer `ℓ` (0-based here) of an LRNR computes
//!
//! ```text
//! y = U[ℓ] · diag(s1[ℓ]) · V[ℓ]ᵀ · z + B[ℓ] · s2[ℓ]      (+ b_out on the last layer)
//! z' = σ(y)                                               (hidden layers only)
//! ```
//!
//! The factors `U`, `V`, `B` are fixed; a network is selected by the coefficient
//! vector `s`, whose canonical flattening is `[s1⁰, s2⁰, s1¹, s2¹, …]`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{LrnrError, Result};
use crate::numerics::rng::Rng;
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative evaluated from the pre-activation; the ReLU subgradient at 0 is 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(LrnrError::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

/// Per-layer weight ranks `r1` and bias ranks `r2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankSpec {
    pub weight: Vec<usize>,
    pub bias: Vec<usize>,
}

impl RankSpec {
    pub fn new(weight: Vec<usize>, bias: Vec<usize>) -> Result<Self> {
        if weight.len() != bias.len() {
            return Err(LrnrError::invalid("rank spec: weight and bias lists differ in length"));
        }
        if weight.len() < 2 {
            return Err(LrnrError::invalid("rank spec: depth must be at least 2"));
        }
        if weight.iter().any(|&r| r == 0) {
            return Err(LrnrError::invalid("rank spec: weight ranks must be positive"));
        }
        Ok(RankSpec { weight, bias })
    }

    /// Same rank `r` for every weight and bias, except the output bias rank
    /// which is `output_bias_rank` (0 by default configurations).
    pub fn uniform(depth: usize, r: usize, output_bias_rank: usize) -> Result<Self> {
        let mut bias = vec![r; depth];
        if let Some(last) = bias.last_mut() {
            *last = output_bias_rank;
        }
        RankSpec::new(vec![r; depth], bias)
    }

    pub fn depth(&self) -> usize {
        self.weight.len()
    }

    /// `n = ‖r‖₁`.
    pub fn total(&self) -> usize {
        self.weight.iter().sum::<usize>() + self.bias.iter().sum::<usize>()
    }

    /// Offset of `s1[layer]` in the flattened vector; `s2[layer]` follows it.
    pub fn weight_offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| self.weight[l] + self.bias[l]).sum()
    }

    pub fn bias_offset(&self, layer: usize) -> usize {
        self.weight_offset(layer) + self.weight[layer]
    }

    /// Each coefficient block as `(offset, len)`, in flattening order.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.depth());
        let mut off = 0;
        for l in 0..self.depth() {
            out.push((off, self.weight[l]));
            off += self.weight[l];
            out.push((off, self.bias[l]));
            off += self.bias[l];
        }
        out
    }
}

/// Coefficient vector split into per-layer blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoeffVector {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl CoeffVector {
    pub fn zeros(spec: &RankSpec) -> Self {
        CoeffVector {
            weight: spec.weight.iter().map(|&r| vec![0.0; r]).collect(),
            bias: spec.bias.iter().map(|&r| vec![0.0; r]).collect(),
        }
    }

    pub fn unflatten(spec: &RankSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.total() {
            return Err(LrnrError::ShapeMismatch(format!(
                "{} coefficients for a rank spec with n = {}",
                flat.len(),
                spec.total()
            )));
        }
        let mut weight = Vec::with_capacity(spec.depth());
        let mut bias = Vec::with_capacity(spec.depth());
        let mut off = 0;
        for l in 0..spec.depth() {
            weight.push(flat[off..off + spec.weight[l]].to_vec());
            off += spec.weight[l];
            bias.push(flat[off..off + spec.bias[l]].to_vec());
            off += spec.bias[l];
        }
        Ok(CoeffVector { weight, bias })
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.weight.iter().map(Vec::len).sum::<usize>() + self.bias.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matches(&self, spec: &RankSpec) -> bool {
        self.weight.len() == spec.depth()
            && self.bias.len() == spec.depth()
            && self.weight.iter().zip(&spec.weight).all(|(w, r)| w.len() == *r)
            && self.bias.iter().zip(&spec.bias).all(|(b, r)| b.len() == *r)
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).flatten().all(|v| v.is_finite())
    }
}

/// Multiply-add counter for instrumented evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub mul_add: u64,
}

impl OpCount {
    #[inline]
    pub fn add(&mut self, n: usize) {
        self.mul_add += n as u64;
    }
}

/// `U · (s1 ⊙ (Vᵀ z)) + B · s2`, counting multiply-adds.
pub(crate) fn lowrank_affine(
    u: &Matrix,
    s1: &[f64],
    v: &Matrix,
    b: &Matrix,
    s2: &[f64],
    z: &[f64],
    ops: &mut OpCount,
) -> Vec<f64> {
    let r = s1.len();
    let mut zeta = vec![0.0; r];
    for (i, &zi) in z.iter().enumerate() {
        for (acc, &vik) in zeta.iter_mut().zip(v.row(i)) {
            *acc += vik * zi;
        }
    }
    for (acc, &sk) in zeta.iter_mut().zip(s1) {
        *acc *= sk;
    }
    ops.add(z.len() * r + r);
    let mut y = vec![0.0; u.rows()];
    for (i, yi) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (&uik, &zk) in u.row(i).iter().zip(&zeta) {
            acc += uik * zk;
        }
        for (&bik, &sk) in b.row(i).iter().zip(s2) {
            acc += bik * sk;
        }
        *yi = acc;
    }
    ops.add(u.rows() * (r + s2.len()));
    y
}

/// The `s`-independent parameters of an LRNR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrnrFactors {
    /// `M[0] = d`, hidden widths, `M[L] =` output dimension.
    pub widths: Vec<usize>,
    pub u: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub b: Vec<Matrix>,
    pub b_out: Vec<f64>,
    pub activation: Activation,
}

impl LrnrFactors {
    pub fn new(
        widths: Vec<usize>,
        u: Vec<Matrix>,
        v: Vec<Matrix>,
        b: Vec<Matrix>,
        b_out: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let f = LrnrFactors {
            widths,
            u,
            v,
            b,
            b_out,
            activation,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let depth = self.widths.len().saturating_sub(1);
        if depth < 2 {
            return Err(LrnrError::invalid("LRNR depth must be at least 2"));
        }
        if self.u.len() != depth || self.v.len() != depth || self.b.len() != depth {
            return Err(LrnrError::ShapeMismatch("factor lists must have one entry per layer".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(LrnrError::invalid("layer widths must be positive"));
        }
        for l in 0..depth {
            let (rows, prev) = (self.widths[l + 1], self.widths[l]);
            let r1 = self.u[l].cols();
            if self.u[l].rows() != rows || self.v[l].rows() != prev || self.v[l].cols() != r1 {
                return Err(LrnrError::ShapeMismatch(format!(
                    "layer {l}: U is {:?}, V is {:?}, widths {prev}->{rows}",
                    self.u[l].shape(),
                    self.v[l].shape()
                )));
            }
            if r1 == 0 {
                return Err(LrnrError::invalid(format!("layer {l}: weight rank must be positive")));
            }
            if self.b[l].rows() != rows {
                return Err(LrnrError::ShapeMismatch(format!(
                    "layer {l}: B has {} rows, expected {rows}",
                    self.b[l].rows()
                )));
            }
            if !(self.u[l].is_finite() && self.v[l].is_finite() && self.b[l].is_finite()) {
                return Err(LrnrError::invalid(format!("layer {l}: non-finite factor entry")));
            }
        }
        if self.b_out.len() != self.output_dim() || self.b_out.iter().any(|v| !v.is_finite()) {
            return Err(LrnrError::ShapeMismatch("output bias".into()));
        }
        Ok(())
    }

    /// Random factors: orthonormal columns where the shape allows it.
    pub fn random(
        input_dim: usize,
        hidden_width: usize,
        output_dim: usize,
        ranks: &RankSpec,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let depth = ranks.depth();
        let mut widths = vec![input_dim];
        widths.extend(std::iter::repeat(hidden_width).take(depth - 1));
        widths.push(output_dim);
        let mut u = Vec::with_capacity(depth);
        let mut v = Vec::with_capacity(depth);
        let mut b = Vec::with_capacity(depth);
        for l in 0..depth {
            u.push(random_frame(widths[l + 1], ranks.weight[l], rng));
            v.push(random_frame(widths[l], ranks.weight[l], rng));
            b.push(random_frame(widths[l + 1], ranks.bias[l], rng));
        }
        LrnrFactors::new(widths, u, v, b, vec![0.0; output_dim], activation)
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("nonempty widths")
    }

    /// Largest hidden width.
    pub fn width(&self) -> usize {
        self.widths[1..self.widths.len() - 1].iter().copied().max().unwrap_or(0)
    }

    pub fn rank_spec(&self) -> RankSpec {
        RankSpec {
            weight: self.u.iter().map(Matrix::cols).collect(),
            bias: self.b.iter().map(Matrix::cols).collect(),
        }
    }

    fn check_coeffs(&self, s: &CoeffVector) -> Result<()> {
        if !s.matches(&self.rank_spec()) {
            return Err(LrnrError::ShapeMismatch(
                "coefficient blocks do not match the factor ranks".into(),
            ));
        }
        Ok(())
    }

    /// Number of trainable factor entries.
    pub fn parameter_count(&self) -> usize {
        self.u.iter().chain(&self.v).chain(&self.b).map(Matrix::len).sum::<usize>() + self.b_out.len()
    }
}

fn random_frame(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
    if cols == 0 {
        return m;
    }
    if rows >= cols {
        // Modified Gram-Schmidt, twice.
        for _ in 0..2 {
            for j in 0..cols {
                for k in 0..j {
                    let proj: f64 = (0..rows).map(|i| m[(i, j)] * m[(i, k)]).sum();
                    for i in 0..rows {
                        let mik = m[(i, k)];
                        m[(i, j)] -= proj * mik;
                    }
                }
                let norm = m.column(j).iter().map(|x| x * x).sum::<f64>().sqrt();
                for i in 0..rows {
                    m[(i, j)] /= norm;
                }
            }
        }
    } else {
        let scale = 1.0 / (cols as f64).sqrt();
        for x in m.as_mut_slice() {
            *x *= scale;
        }
    }
    m
}

/// Dense `W[layer](s)` and `b[layer](s)`; the output bias `b_out` is included on
/// the last layer.
pub fn assemble_layer(factors: &LrnrFactors, s: &CoeffVector, layer: usize) -> Result<(Matrix, Vec<f64>)> {
    factors.check_coeffs(s)?;
    if layer >= factors.depth() {
        return Err(LrnrError::invalid(format!(
            "layer {layer} out of range for depth {}",
            factors.depth()
        )));
    }
    let weight = factors.u[layer]
        .scale_columns(&s.weight[layer])
        .matmul(&factors.v[layer].transpose())?;
    let mut bias = factors.b[layer].matvec(&s.bias[layer])?;
    if layer + 1 == factors.depth() {
        for (b, o) in bias.iter_mut().zip(&factors.b_out) {
            *b += o;
        }
    }
    Ok((weight, bias))
}

/// Pre-activations `y[ℓ]` for every layer, hidden states `z[ℓ]` for hidden
/// layers, and the output.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub pre: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub fn forward(factors: &LrnrFactors, s: &CoeffVector, x: &[f64]) -> Result<Vec<f64>> {
    forward_counted(factors, s, x, &mut OpCount::default())
}

pub fn forward_counted(
    factors: &LrnrFactors,
    s: &CoeffVector,
    x: &[f64],
    ops: &mut OpCount,
) -> Result<Vec<f64>> {
    Ok(forward_impl(factors, s, x, ops, false)?.output)
}

pub fn forward_trace(factors: &LrnrFactors, s: &CoeffVector, x: &[f64]) -> Result<ForwardTrace> {
    forward_impl(factors, s, x, &mut OpCount::default(), true)
}

fn forward_impl(
    factors: &LrnrFactors,
    s: &CoeffVector,
    x: &[f64],
    ops: &mut OpCount,
    record: bool,
) -> Result<ForwardTrace> {
    factors.check_coeffs(s)?;
    if x.len() != factors.input_dim() {
        return Err(LrnrError::ShapeMismatch(format!(
            "input of length {} for spatial dimension {}",
            x.len(),
            factors.input_dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LrnrError::invalid("non-finite input point"));
    }
    let depth = factors.depth();
    let mut trace = ForwardTrace {
        pre: Vec::new(),
        hidden: Vec::new(),
        output: Vec::new(),
    };
    let mut z = x.to_vec();
    for l in 0..depth {
        let mut y = lowrank_affine(
            &factors.u[l],
            &s.weight[l],
            &factors.v[l],
            &factors.b[l],
            &s.bias[l],
            &z,
            ops,
        );
        if l + 1 == depth {
            for (yi, o) in y.iter_mut().zip(&factors.b_out) {
                *yi += o;
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LrnrError::NumericOverflow { layer: l });
        }
        if l + 1 == depth {
            if record {
                trace.pre.push(y.clone());
            }
            trace.output = y;
        } else {
            let act = factors.activation;
            let next: Vec<f64> = y.iter().map(|&v| act.apply(v)).collect();
            if record {
                trace.pre.push(y);
                trace.hidden.push(next.clone());
            }
            z = next;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::seeded;

    fn hand_model() -> (LrnrFactors, CoeffVector) {
        let f = LrnrFactors::new(
            vec![1, 2, 1],
            vec![
                Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
                Matrix::from_rows(&[vec![1.0]]).unwrap(),
            ],
            vec![
                Matrix::from_rows(&[vec![1.0]]).unwrap(),
                Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
            ],
            vec![
                Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(),
                Matrix::zeros(1, 0),
            ],
            vec![0.0],
            Activation::Relu,
        )
        .unwrap();
        let s = CoeffVector {
            weight: vec![vec![2.0], vec![1.0]],
            bias: vec![vec![1.0], vec![]],
        };
        (f, s)
    }

    #[test]
    fn hand_computed_forward() {
        let (f, s) = hand_model();
        let tr = forward_trace(&f, &s, &[1.0]).unwrap();
        assert_eq!(tr.pre[0], vec![3.0, 1.0]);
        assert_eq!(tr.hidden[0], vec![3.0, 1.0]);
        assert_eq!(tr.output, vec![4.0]);
    }

    #[test]
    fn rank_one_scaling() {
        let (f, s) = hand_model();
        let (w, _) = assemble_layer(&f, &s, 0).unwrap();
        assert_eq!(w.as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn zero_coefficients_collapse_to_output_bias() {
        let mut rng = seeded(3);
        let spec = RankSpec::uniform(3, 2, 0).unwrap();
        let mut f = LrnrFactors::random(2, 6, 1, &spec, Activation::Relu, &mut rng).unwrap();
        f.b_out = vec![0.75];
        let s = CoeffVector::zeros(&spec);
        for x in [[0.0, 0.0], [1.0, -2.0], [3.0, 0.5]] {
            assert_eq!(forward(&f, &s, &x).unwrap(), vec![0.75]);
        }
        let (w, b) = assemble_layer(&f, &s, 2).unwrap();
        assert!(w.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(b, vec![0.75]);
    }

    #[test]
    fn flatten_order_is_layerwise_weights_first() {
        let spec = RankSpec::new(vec![2, 1], vec![1, 0]).unwrap();
        let s = CoeffVector::unflatten(&spec, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.weight, vec![vec![1.0, 2.0], vec![4.0]]);
        assert_eq!(s.bias, vec![vec![3.0], vec![]]);
        assert_eq!(spec.blocks(), vec![(0, 2), (2, 1), (3, 1), (4, 0)]);
        assert!(CoeffVector::unflatten(&spec, &[1.0]).is_err());
    }

    #[test]
    fn shape_mismatch_and_overflow() {
        let (f, s) = hand_model();
        assert!(forward(&f, &s, &[1.0, 2.0]).is_err());
        let bad = CoeffVector {
            weight: vec![vec![1e308], vec![1e308]],
            bias: vec![vec![1e308], vec![]],
        };
        match forward(&f, &bad, &[1e308]) {
            Err(LrnrError::NumericOverflow { layer }) => assert_eq!(layer, 0),
            other => panic!("expected overflow, got {other:?}"),
        }
        assert!(RankSpec::new(vec![1], vec![0]).is_err());
    }
}
