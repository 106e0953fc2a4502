//! The time-to-coefficients network and its composition with an LRNR.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{LrnrError, Result};
use crate::lrnr::{forward, Activation, CoeffVector, LrnrFactors, RankSpec};
use crate::numerics::rng::Rng;
use crate::numerics::Matrix;

/// Initial coefficient magnitudes decay like `ρ^i` within each block.
pub const INIT_DECAY: f64 = 0.9;

/// Affine map of `[t0, t1]` onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeNormalizer {
    pub t0: f64,
    pub t1: f64,
}

impl TimeNormalizer {
    pub fn new(t0: f64, t1: f64) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(LrnrError::invalid(format!("time bounds [{t0}, {t1}] must satisfy t1 > t0")));
        }
        Ok(TimeNormalizer { t0, t1 })
    }

    /// Bounds for a set of sample times; a single time gets a unit window.
    pub fn from_times(times: &[f64]) -> Result<Self> {
        let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            return Err(LrnrError::invalid("no finite sample times"));
        }
        if hi > lo {
            TimeNormalizer::new(lo, hi)
        } else {
            TimeNormalizer::new(lo, lo + 1.0)
        }
    }

    #[inline]
    pub fn normalize(&self, t: f64) -> f64 {
        (t - self.t0) / (self.t1 - self.t0)
    }

    /// True when `t` lies outside the training window.
    pub fn is_extrapolation(&self, t: f64) -> bool {
        t < self.t0 || t > self.t1
    }

    pub fn span(&self) -> f64 {
        self.t1 - self.t0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Fully connected network `R → R^n`; the activation is applied after every
/// layer except the last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperNetParams {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

/// Intermediate values of one hypernetwork evaluation.
#[derive(Clone, Debug)]
pub struct HyperTrace {
    /// Input to each layer (the first is `[t̂]`).
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pub pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl HyperNetParams {
    /// `depth` affine layers; `depth − 1` hidden layers of size `width`.
    pub fn init(ranks: &RankSpec, width: usize, depth: usize, activation: Activation, rng: &mut Rng) -> Result<Self> {
        if depth == 0 {
            return Err(LrnrError::invalid("hypernetwork depth must be at least 1"));
        }
        if depth > 1 && width == 0 {
            return Err(LrnrError::invalid("hypernetwork width must be positive"));
        }
        let n = ranks.total();
        let mut sizes = vec![1];
        sizes.extend(std::iter::repeat(width).take(depth - 1));
        sizes.push(n);

        // Target magnitude of each output coefficient: ρ^i within its block.
        let mut decay = vec![0.0; n];
        for (off, len) in ranks.blocks() {
            for i in 0..len {
                decay[off + i] = INIT_DECAY.powi(i as i32);
            }
        }

        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let a = (3.0 / fan_in as f64).sqrt();
            if l + 1 < depth {
                let weight = Matrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-a..a));
                let bias = (0..fan_out).map(|_| rng.gen_range(-a..a)).collect();
                layers.push(DenseLayer { weight, bias });
            } else {
                let weight = Matrix::from_fn(fan_out, fan_in, |i, _| 0.1 * decay[i] * rng.gen_range(-a..a));
                layers.push(DenseLayer { weight, bias: decay.clone() });
            }
        }
        Ok(HyperNetParams { layers, activation })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Hidden width (0 for a single affine layer).
    pub fn width(&self) -> usize {
        if self.layers.len() > 1 {
            self.layers[0].weight.rows()
        } else {
            0
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.rows())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = 1;
        for (k, l) in self.layers.iter().enumerate() {
            if l.weight.cols() != prev || l.bias.len() != l.weight.rows() {
                return Err(LrnrError::ShapeMismatch(format!("hypernetwork layer {k}")));
            }
            if !l.weight.is_finite() || l.bias.iter().any(|v| !v.is_finite()) {
                return Err(LrnrError::invalid(format!("hypernetwork layer {k}: non-finite parameter")));
            }
            prev = l.weight.rows();
        }
        if self.layers.is_empty() {
            return Err(LrnrError::invalid("hypernetwork has no layers"));
        }
        Ok(())
    }

    /// Raw output for a normalized time.
    pub fn eval(&self, t_hat: f64) -> Vec<f64> {
        self.trace(t_hat).output
    }

    pub fn trace(&self, t_hat: f64) -> HyperTrace {
        let depth = self.layers.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth.saturating_sub(1));
        let mut h = vec![t_hat];
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = layer.bias.clone();
            for (i, yi) in y.iter_mut().enumerate() {
                for (w, x) in layer.weight.row(i).iter().zip(&h) {
                    *yi += w * x;
                }
            }
            inputs.push(std::mem::take(&mut h));
            if k + 1 < depth {
                h = y.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(y);
            } else {
                h = y;
            }
        }
        HyperTrace {
            inputs,
            pre,
            output: h,
        }
    }

    /// Accumulate parameter gradients for output gradient `g_out`; gradients
    /// are laid out like `self.layers`.
    pub fn backward(&self, trace: &HyperTrace, g_out: &[f64], grads: &mut [DenseLayer]) {
        let depth = self.layers.len();
        let mut g = g_out.to_vec();
        for k in (0..depth).rev() {
            let layer = &self.layers[k];
            let input = &trace.inputs[k];
            let gk = &mut grads[k];
            for (i, &gi) in g.iter().enumerate() {
                gk.bias[i] += gi;
                for (w, x) in gk.weight.row_mut(i).iter_mut().zip(input) {
                    *w += gi * x;
                }
            }
            if k == 0 {
                break;
            }
            let mut g_in = vec![0.0; input.len()];
            for (i, &gi) in g.iter().enumerate() {
                for (acc, w) in g_in.iter_mut().zip(layer.weight.row(i)) {
                    *acc += gi * w;
                }
            }
            for (gv, &y) in g_in.iter_mut().zip(&trace.pre[k - 1]) {
                *gv *= self.activation.derivative(y);
            }
            g = g_in;
        }
    }

    /// Zero-valued gradient storage shaped like the parameters.
    pub fn zeros_like(&self) -> Vec<DenseLayer> {
        self.layers
            .iter()
            .map(|l| DenseLayer {
                weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                bias: vec![0.0; l.bias.len()],
            })
            .collect()
    }
}

pub fn hyper_forward(
    hyper: &HyperNetParams,
    normalizer: &TimeNormalizer,
    ranks: &RankSpec,
    t: f64,
) -> Result<CoeffVector> {
    let out = hyper.eval(normalizer.normalize(t));
    if out.iter().any(|v| !v.is_finite()) {
        return Err(LrnrError::invalid("hypernetwork produced a non-finite coefficient"));
    }
    CoeffVector::unflatten(ranks, &out)
}

/// LRNR factors together with the hypernetwork that drives them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub factors: LrnrFactors,
    pub hyper: HyperNetParams,
    pub normalizer: TimeNormalizer,
}

/// Shape of a meta-network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub output_dim: usize,
    pub width: usize,
    pub ranks: RankSpec,
    pub activation: Activation,
    pub hyper_width: usize,
    pub hyper_depth: usize,
    pub hyper_activation: Activation,
}

impl MetaModel {
    pub fn new(factors: LrnrFactors, hyper: HyperNetParams, normalizer: TimeNormalizer) -> Result<Self> {
        factors.validate()?;
        hyper.validate()?;
        if hyper.output_dim() != factors.rank_spec().total() {
            return Err(LrnrError::ShapeMismatch(format!(
                "hypernetwork emits {} coefficients, LRNR expects {}",
                hyper.output_dim(),
                factors.rank_spec().total()
            )));
        }
        Ok(MetaModel {
            factors,
            hyper,
            normalizer,
        })
    }

    pub fn init(shape: &ModelShape, normalizer: TimeNormalizer, rng: &mut Rng) -> Result<Self> {
        let factors = LrnrFactors::random(
            shape.input_dim,
            shape.width,
            shape.output_dim,
            &shape.ranks,
            shape.activation,
            rng,
        )?;
        let hyper = HyperNetParams::init(
            &shape.ranks,
            shape.hyper_width,
            shape.hyper_depth,
            shape.hyper_activation,
            rng,
        )?;
        MetaModel::new(factors, hyper, normalizer)
    }

    pub fn ranks(&self) -> RankSpec {
        self.factors.rank_spec()
    }

    pub fn coefficients(&self, t: f64) -> Result<CoeffVector> {
        hyper_forward(&self.hyper, &self.normalizer, &self.ranks(), t)
    }

    pub fn parameter_count(&self) -> usize {
        self.factors.parameter_count() + self.hyper.parameter_count()
    }
}

pub fn meta_forward(model: &MetaModel, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let s = model.coefficients(t)?;
    forward(&model.factors, &s, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::seeded;

    #[test]
    fn linear_hypernet() {
        let spec = RankSpec::new(vec![1, 1], vec![0, 0]).unwrap();
        let hyper = HyperNetParams {
            layers: vec![DenseLayer {
                weight: Matrix::from_rows(&[vec![2.0], vec![-1.0]]).unwrap(),
                bias: vec![0.5, 3.0],
            }],
            activation: Activation::Tanh,
        };
        let norm = TimeNormalizer::new(0.0, 2.0).unwrap();
        let s = hyper_forward(&hyper, &norm, &spec, 1.0).unwrap();
        assert_eq!(s.flatten(), vec![1.5, 2.5]);
    }

    #[test]
    fn init_has_decaying_bias() {
        let spec = RankSpec::uniform(3, 4, 0).unwrap();
        let h = HyperNetParams::init(&spec, 5, 2, Activation::Tanh, &mut seeded(1)).unwrap();
        let b = &h.layers[1].bias;
        assert_eq!(b.len(), spec.total());
        assert!((b[1] - 0.9).abs() < 1e-15 && (b[3] - 0.729).abs() < 1e-15);
        assert_eq!(b[4], 1.0);
        assert_eq!(h.width(), 5);
        h.validate().unwrap();
    }

    #[test]
    fn normalizer_bounds() {
        assert!(TimeNormalizer::new(1.0, 1.0).is_err());
        let n = TimeNormalizer::from_times(&[0.5, 0.25, 1.25]).unwrap();
        assert_eq!(n.normalize(0.25), 0.0);
        assert_eq!(n.normalize(1.25), 1.0);
        assert!(n.is_extrapolation(1.5));
    }
}
