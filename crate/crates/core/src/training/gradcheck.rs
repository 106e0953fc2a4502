//! Finite-difference audit of the analytic gradients.

use rand::Rng as _;

use super::backprop::{backprop, parameter_blocks, params_to_vec, total_loss, vec_to_params};
use super::TrainConfig;
use crate::dataio::{Snapshot, WaveDataset};
use crate::error::Result;
use crate::hypernet::{MetaModel, ModelShape, TimeNormalizer};
use crate::lrnr::{forward_trace, Activation, RankSpec};
use crate::numerics::rng::{self, Rng};
use crate::numerics::Matrix;

/// Base step; each parameter uses `STEP·max(1, |θ|)`.
const STEP: f64 = 1e-6;
/// Differences below this fraction of the largest gradient entry count as
/// absolute rather than relative error.
const FLOOR_FRACTION: f64 = 1e-3;
/// Required distance of every ReLU pre-activation and every regularizer kink from zero.
const KINK_MARGIN: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub max_rel_error: f64,
    pub worst_block: String,
    pub parameters: usize,
    /// Attempts needed to find a configuration away from kinks.
    pub attempts: usize,
}

/// `|g − ĝ| / max(|g|, |ĝ|, floor)` over every parameter, with `floor` a
/// fixed fraction of the largest gradient magnitude.
pub fn gradcheck(model: &MetaModel, batch: &[&Snapshot], config: &TrainConfig, alpha: f64) -> Result<(f64, String)> {
    let (_, grads) = backprop(model, batch, config, alpha)?;
    let analytic = grads.flatten();
    let base = params_to_vec(model);
    let mut probe = model.clone();
    let mut numeric = vec![0.0; base.len()];
    let mut theta = base.clone();
    for i in 0..base.len() {
        let h = STEP * base[i].abs().max(1.0);
        theta[i] = base[i] + h;
        vec_to_params(&mut probe, &theta)?;
        let fp = total_loss(&probe, batch, config, alpha)?.total;
        theta[i] = base[i] - h;
        vec_to_params(&mut probe, &theta)?;
        let fm = total_loss(&probe, batch, config, alpha)?.total;
        theta[i] = base[i];
        numeric[i] = (fp - fm) / (2.0 * h);
    }
    let scale = analytic.iter().chain(&numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (FLOOR_FRACTION * scale).max(f64::MIN_POSITIVE);
    let blocks = parameter_blocks(model);
    let mut worst = (0.0, String::new());
    let mut off = 0;
    for (name, len) in blocks {
        for i in off..off + len {
            let denom = analytic[i].abs().max(numeric[i].abs()).max(floor);
            let rel = (analytic[i] - numeric[i]).abs() / denom;
            if rel > worst.0 || worst.1.is_empty() {
                worst = (rel.max(worst.0), name.clone());
            }
        }
        off += len;
    }
    Ok(worst)
}

/// The default audit network: `d = 1`, width 8, depth 3, ranks `(2,2,2; 2,2,0)`,
/// hypernetwork `5 × 2`, together with a small random dataset and a loss
/// configuration that exercises every term.
pub fn small_meta_network(rng: &mut Rng) -> Result<(MetaModel, WaveDataset, TrainConfig)> {
    let shape = ModelShape {
        input_dim: 1,
        output_dim: 1,
        width: 8,
        ranks: RankSpec::new(vec![2, 2, 2], vec![2, 2, 0])?,
        activation: Activation::Relu,
        hyper_width: 5,
        hyper_depth: 2,
        hyper_activation: Activation::Tanh,
    };
    let normalizer = TimeNormalizer::new(0.0, 1.0)?;
    let mut model = MetaModel::init(&shape, normalizer, rng)?;
    model.factors.b_out = vec![rng.gen_range(-0.5..0.5)];
    // Perturb the hypernetwork so coefficient blocks are not already ordered.
    for layer in &mut model.hyper.layers {
        for b in &mut layer.bias {
            *b += rng.gen_range(-0.5..0.5);
        }
    }
    let points = 12;
    let snapshots = (0..4)
        .map(|_| {
            let time = rng.gen_range(0.0..1.0);
            let xs: Vec<f64> = (0..points).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let values: Vec<f64> = xs.iter().map(|&x| (3.0 * x - time).sin() + 0.3).collect();
            let weights: Vec<f64> = (0..points).map(|_| rng.gen_range(0.5..1.5)).collect();
            Ok(Snapshot {
                time,
                points: Matrix::from_vec(points, 1, xs)?,
                values: Matrix::from_vec(points, 1, values)?,
                weights,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = WaveDataset {
        spatial_dim: 1,
        output_dim: 1,
        grid_kind: crate::dataio::GridKind::Adaptive,
        grid: None,
        snapshots,
    };
    let config = TrainConfig {
        lambda_sparse: 0.1,
        lambda_ortho: 0.05,
        gamma: 1.05,
        batch: 4,
        ..TrainConfig::default()
    };
    Ok((model, ds, config))
}

/// Smallest distance of a ReLU pre-activation, sparsity kink or ℓ1 residual from zero.
fn kink_distance(model: &MetaModel, ds: &WaveDataset, config: &TrainConfig) -> Result<f64> {
    let mut dist = f64::INFINITY;
    for snap in &ds.snapshots {
        let s = model.coefficients(snap.time)?;
        for block in s.weight.iter().chain(&s.bias) {
            for w in block.windows(2) {
                dist = dist.min((config.gamma * w[1] - w[0]).abs());
            }
        }
        for p in 0..snap.points.rows() {
            let tr = forward_trace(&model.factors, &s, snap.points.row(p))?;
            for pre in &tr.pre[..tr.pre.len() - 1] {
                for v in pre {
                    dist = dist.min(v.abs());
                }
            }
            for (o, y) in tr.output.iter().zip(snap.values.row(p)) {
                dist = dist.min((o - y).abs());
            }
        }
    }
    Ok(dist)
}

/// Audit the default network for one seed under both misfit forms; draws new
/// configurations until every kink is at least `1e-4` away.
pub fn gradcheck_default(seed: u64) -> Result<GradcheckReport> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        let mut rng = rng::stream(seed, attempt as u64);
        let (model, ds, config) = small_meta_network(&mut rng)?;
        if kink_distance(&model, &ds, &config)? < KINK_MARGIN && attempt < 100 {
            continue;
        }
        let batch: Vec<&Snapshot> = ds.snapshots.iter().collect();
        let mut worst = (0.0f64, String::new());
        for alpha in [0.0, 1.0] {
            let (err, block) = gradcheck(&model, &batch, &config, alpha)?;
            if err > worst.0 || worst.1.is_empty() {
                worst = (err.max(worst.0), block);
            }
        }
        return Ok(GradcheckReport {
            seed,
            max_rel_error: worst.0,
            worst_block: worst.1,
            parameters: model.parameter_count(),
            attempts: attempt,
        });
    }
}
