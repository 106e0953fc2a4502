//! Checkpoints: a trained meta-network, optional optimizer state and config,
//! and optional hypermode and FastLRNR sections. Every float lives in the
//! binary payload so that round trips are bit-exact.

use std::path::Path;

use super::container::Container;
use crate::error::{LrnrError, Result};
use crate::fastlrnr::{FastLayer, FastLrnrModel, HiddenBasis};
use crate::hypermodes::HypermodeBasis;
use crate::hypernet::{DenseLayer, HyperNetParams, MetaModel, TimeNormalizer};
use crate::lrnr::{Activation, LrnrFactors, RankSpec};
use crate::numerics::Matrix;
use crate::training::{AdamState, PlateauState, TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: &str = "LRNRC";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const FAST_MAGIC: &str = "LRNRF";
pub const FAST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: MetaModel,
    pub state: Option<TrainState>,
    pub config: Option<TrainConfig>,
    /// Path of the history CSV written alongside, if any.
    pub history: Option<String>,
    pub hypermodes: Option<HypermodeBasis>,
    pub fast: Option<FastLrnrModel>,
}

impl Checkpoint {
    pub fn new(model: MetaModel) -> Self {
        Checkpoint {
            model,
            state: None,
            config: None,
            history: None,
            hypermodes: None,
            fast: None,
        }
    }
}

fn push_matrix(c: &mut Container, name: &str, m: &Matrix) -> Result<()> {
    c.push(name, vec![m.rows(), m.cols()], m.as_slice().to_vec())
}

fn take_matrix(c: &Container, name: &str) -> Result<Matrix> {
    let s = c.section(name)?;
    if s.shape.len() != 2 {
        return Err(LrnrError::ShapeMismatch(format!("section {name} is not a matrix")));
    }
    Matrix::from_vec(s.shape[0], s.shape[1], s.data.clone())
}

fn push_vec(c: &mut Container, name: &str, v: &[f64]) -> Result<()> {
    c.push(name, vec![v.len()], v.to_vec())
}

fn take_vec(c: &Container, name: &str) -> Result<Vec<f64>> {
    let s = c.section(name)?;
    if s.shape.len() != 1 {
        return Err(LrnrError::ShapeMismatch(format!("section {name} is not a vector")));
    }
    Ok(s.data.clone())
}

fn take_scalars<const N: usize>(c: &Container, name: &str) -> Result<[f64; N]> {
    let v = c.take(name, &[N])?;
    let mut out = [0.0; N];
    out.copy_from_slice(v);
    Ok(out)
}

fn encode_model(c: &mut Container, model: &MetaModel) -> Result<()> {
    let f = &model.factors;
    c.set_meta("widths", &f.widths)?;
    c.set_meta("activation", &f.activation.name())?;
    c.set_meta("ranks", &f.rank_spec())?;
    for l in 0..f.depth() {
        push_matrix(c, &format!("U.{l}"), &f.u[l])?;
        push_matrix(c, &format!("V.{l}"), &f.v[l])?;
        push_matrix(c, &format!("B.{l}"), &f.b[l])?;
    }
    push_vec(c, "b_out", &f.b_out)?;
    c.set_meta("hyper_layers", &model.hyper.layers.len())?;
    c.set_meta("hyper_activation", &model.hyper.activation.name())?;
    for (k, layer) in model.hyper.layers.iter().enumerate() {
        push_matrix(c, &format!("hyper.W.{k}"), &layer.weight)?;
        push_vec(c, &format!("hyper.b.{k}"), &layer.bias)?;
    }
    push_vec(c, "normalizer", &[model.normalizer.t0, model.normalizer.t1])
}

fn decode_model(c: &Container) -> Result<MetaModel> {
    let widths: Vec<usize> = c.meta("widths")?;
    let activation = Activation::parse(&c.meta::<String>("activation")?)?;
    let ranks: RankSpec = c.meta("ranks")?;
    let depth = widths.len().saturating_sub(1);
    let (mut u, mut v, mut b) = (Vec::new(), Vec::new(), Vec::new());
    for l in 0..depth {
        u.push(take_matrix(c, &format!("U.{l}"))?);
        v.push(take_matrix(c, &format!("V.{l}"))?);
        b.push(take_matrix(c, &format!("B.{l}"))?);
    }
    let factors = LrnrFactors::new(widths, u, v, b, take_vec(c, "b_out")?, activation)?;
    if factors.rank_spec() != ranks {
        return Err(LrnrError::ShapeMismatch("stored ranks disagree with the factor shapes".into()));
    }
    let layers = (0..c.meta::<usize>("hyper_layers")?)
        .map(|k| {
            Ok(DenseLayer {
                weight: take_matrix(c, &format!("hyper.W.{k}"))?,
                bias: take_vec(c, &format!("hyper.b.{k}"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hyper = HyperNetParams {
        layers,
        activation: Activation::parse(&c.meta::<String>("hyper_activation")?)?,
    };
    let [t0, t1] = take_scalars(c, "normalizer")?;
    MetaModel::new(factors, hyper, TimeNormalizer::new(t0, t1)?)
}

fn encode_state(c: &mut Container, s: &TrainState) -> Result<()> {
    c.set_meta("state_epoch", &s.epoch)?;
    c.set_meta("state_switched", &s.switched)?;
    c.set_meta("state_bad_epochs", &s.plateau.bad_epochs)?;
    c.set_meta("state_adam_step", &s.adam.step)?;
    push_vec(c, "state.scalars", &[s.lr, s.plateau.best, s.radius])?;
    push_vec(c, "state.adam.m", &s.adam.m)?;
    push_vec(c, "state.adam.v", &s.adam.v)
}

fn decode_state(c: &Container) -> Result<TrainState> {
    let [lr, best, radius] = take_scalars(c, "state.scalars")?;
    let m = take_vec(c, "state.adam.m")?;
    let v = take_vec(c, "state.adam.v")?;
    if m.len() != v.len() {
        return Err(LrnrError::ShapeMismatch("Adam moment lengths differ".into()));
    }
    Ok(TrainState {
        epoch: c.meta("state_epoch")?,
        adam: AdamState {
            m,
            v,
            step: c.meta("state_adam_step")?,
        },
        lr,
        switched: c.meta("state_switched")?,
        plateau: PlateauState {
            best,
            bad_epochs: c.meta("state_bad_epochs")?,
        },
        radius,
    })
}

fn encode_hypermodes(c: &mut Container, h: &HypermodeBasis) -> Result<()> {
    c.set_meta("hypermode_rank", &h.rank)?;
    push_matrix(c, "hypermodes.phi", &h.phi)?;
    push_matrix(c, "hypermodes.psi", &h.psi)?;
    push_vec(c, "hypermodes.sigma", &h.singular_values)?;
    push_vec(c, "hypermodes.times", &h.times)?;
    push_vec(c, "hypermodes.energy_tol", &[h.energy_tol])
}

fn decode_hypermodes(c: &Container) -> Result<HypermodeBasis> {
    let [energy_tol] = take_scalars(c, "hypermodes.energy_tol")?;
    Ok(HypermodeBasis {
        phi: take_matrix(c, "hypermodes.phi")?,
        singular_values: take_vec(c, "hypermodes.sigma")?,
        psi: take_matrix(c, "hypermodes.psi")?,
        rank: c.meta("hypermode_rank")?,
        times: take_vec(c, "hypermodes.times")?,
        energy_tol,
    })
}

fn encode_fast(c: &mut Container, f: &FastLrnrModel) -> Result<()> {
    c.set_meta("fast_layers", &f.layers.len())?;
    c.set_meta("fast_activation", &f.activation.name())?;
    c.set_meta("fast_ranks", &f.ranks)?;
    c.set_meta("fast_warnings", &f.warnings)?;
    c.set_meta("fast_projector", &f.projector.is_some())?;
    c.set_meta(
        "fast_indices",
        &f.bases.iter().map(|b| b.indices.clone()).collect::<Vec<_>>(),
    )?;
    for (l, layer) in f.layers.iter().enumerate() {
        push_matrix(c, &format!("fast.U.{l}"), &layer.u)?;
        push_matrix(c, &format!("fast.V.{l}"), &layer.v)?;
        push_matrix(c, &format!("fast.B.{l}"), &layer.b)?;
    }
    for (l, basis) in f.bases.iter().enumerate() {
        push_matrix(c, &format!("fast.xi.{l}"), &basis.xi)?;
    }
    push_vec(
        c,
        "fast.condition",
        &f.bases.iter().map(|b| b.condition).collect::<Vec<_>>(),
    )?;
    push_vec(c, "fast.b_out", &f.b_out)?;
    let dim = f.anchors.first().map_or(0, Vec::len);
    if f.anchors.iter().any(|a| a.len() != dim) {
        return Err(LrnrError::ShapeMismatch("anchor points of different dimension".into()));
    }
    c.push("fast.anchors", vec![f.anchors.len(), dim], f.anchors.concat())?;
    if let Some(p) = &f.projector {
        push_matrix(c, "fast.projector", p)?;
    }
    Ok(())
}

fn decode_fast(c: &Container) -> Result<FastLrnrModel> {
    let n: usize = c.meta("fast_layers")?;
    let layers = (0..n)
        .map(|l| {
            Ok(FastLayer {
                u: take_matrix(c, &format!("fast.U.{l}"))?,
                v: take_matrix(c, &format!("fast.V.{l}"))?,
                b: take_matrix(c, &format!("fast.B.{l}"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let indices: Vec<Vec<usize>> = c.meta("fast_indices")?;
    let condition = take_vec(c, "fast.condition")?;
    if condition.len() != indices.len() {
        return Err(LrnrError::ShapeMismatch("one condition estimate per hidden basis".into()));
    }
    let bases = indices
        .into_iter()
        .zip(condition)
        .enumerate()
        .map(|(l, (indices, condition))| {
            Ok(HiddenBasis {
                xi: take_matrix(c, &format!("fast.xi.{l}"))?,
                indices,
                condition,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let anchors = take_matrix(c, "fast.anchors")?;
    let projector = if c.meta::<bool>("fast_projector")? {
        Some(take_matrix(c, "fast.projector")?)
    } else {
        None
    };
    Ok(FastLrnrModel {
        layers,
        b_out: take_vec(c, "fast.b_out")?,
        activation: Activation::parse(&c.meta::<String>("fast_activation")?)?,
        ranks: c.meta("fast_ranks")?,
        bases,
        anchors: (0..anchors.rows()).map(|i| anchors.row(i).to_vec()).collect(),
        projector,
        warnings: c.meta("fast_warnings")?,
    })
}

pub fn checkpoint_to_container(ck: &Checkpoint) -> Result<Container> {
    let mut c = Container::new();
    encode_model(&mut c, &ck.model)?;
    if let Some(s) = &ck.state {
        if s.adam.m.len() != ck.model.parameter_count() {
            return Err(LrnrError::ShapeMismatch("optimizer state does not match the model".into()));
        }
        encode_state(&mut c, s)?;
    }
    c.set_meta("config", &ck.config)?;
    c.set_meta("history", &ck.history)?;
    if let Some(h) = &ck.hypermodes {
        encode_hypermodes(&mut c, h)?;
    }
    if let Some(f) = &ck.fast {
        encode_fast(&mut c, f)?;
    }
    Ok(c)
}

pub fn checkpoint_from_container(c: &Container) -> Result<Checkpoint> {
    let model = decode_model(c)?;
    let state = if c.has_section("state.scalars") {
        Some(decode_state(c)?)
    } else {
        None
    };
    let config: Option<TrainConfig> = if c.has_meta("config") { c.meta("config")? } else { None };
    Ok(Checkpoint {
        model,
        state,
        config,
        history: if c.has_meta("history") { c.meta("history")? } else { None },
        hypermodes: if c.has_section("hypermodes.phi") {
            Some(decode_hypermodes(c)?)
        } else {
            None
        },
        fast: if c.has_meta("fast_layers") {
            Some(decode_fast(c)?)
        } else {
            None
        },
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    checkpoint_to_container(ck)?.write(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_container(&Container::read(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?)
}

/// Standalone compressed model, for evaluation without the full network.
pub fn save_fast_model(fast: &FastLrnrModel, path: &Path) -> Result<()> {
    let mut c = Container::new();
    encode_fast(&mut c, fast)?;
    c.write(path, FAST_MAGIC, FAST_VERSION)
}

pub fn load_fast_model(path: &Path) -> Result<FastLrnrModel> {
    decode_fast(&Container::read(path, FAST_MAGIC, FAST_VERSION)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypernet::ModelShape;
    use crate::numerics::rng;

    fn model() -> MetaModel {
        let shape = ModelShape {
            input_dim: 2,
            output_dim: 1,
            width: 6,
            ranks: RankSpec::new(vec![2, 3, 1], vec![1, 2, 0]).unwrap(),
            activation: Activation::Relu,
            hyper_width: 4,
            hyper_depth: 3,
            hyper_activation: Activation::Tanh,
        };
        MetaModel::init(&shape, TimeNormalizer::new(0.1, 0.7).unwrap(), &mut rng::seeded(3)).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let m = model();
        let mut ck = Checkpoint::new(m.clone());
        let mut state = TrainState::new(m.parameter_count(), &TrainConfig::default());
        state.adam.m[3] = 1.0 / 3.0;
        state.adam.v[0] = std::f64::consts::PI * 1e-300;
        state.lr = 0.1 + 0.2;
        state.epoch = 7;
        ck.state = Some(state);
        ck.config = Some(TrainConfig {
            lambda_sparse: 3.65e-18,
            ..TrainConfig::default()
        });
        ck.history = Some("history.csv".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.state.unwrap().plateau.best, f64::INFINITY);

        let bare = Checkpoint::new(m);
        save_checkpoint(&bare, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), bare);
    }

    #[test]
    fn wrong_magic_and_version() {
        let ck = Checkpoint::new(model());
        let bytes = checkpoint_to_container(&ck).unwrap().encode(CHECKPOINT_MAGIC, 2).unwrap();
        assert!(matches!(
            Container::decode(&bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION),
            Err(LrnrError::VersionMismatch { .. })
        ));
        assert!(matches!(
            Container::decode(&bytes, FAST_MAGIC, FAST_VERSION),
            Err(LrnrError::Format(_))
        ));
    }
}
