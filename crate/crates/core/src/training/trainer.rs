use std::borrow::Cow;

use super::backprop::{backprop, params_to_vec, snapshot_output, vec_to_params};
use super::schedule::{mollifier_radius, plateau_lr};
use super::{adam_step, AdamState, HistoryRow, TrainConfig, TrainState};
use crate::dataio::{mollified_view, sample_batch, Snapshot, WaveDataset};
use crate::error::{LrnrError, Result};
use crate::hypernet::MetaModel;
use crate::numerics::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub last_rel_l2: Option<f64>,
}

/// `sqrt(Σ w |ŷ − y|²) / sqrt(Σ w |y|²)` accumulated over every snapshot.
pub fn relative_l2(model: &MetaModel, ds: &WaveDataset) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for snap in &ds.snapshots {
        let s = model.coefficients(snap.time)?;
        let yhat = snapshot_output(&model.factors, &s, &snap.points)?;
        let m = ds.output_dim;
        for (p, &w) in snap.weights.iter().enumerate() {
            for c in 0..m {
                let y = snap.values.as_slice()[p * m + c];
                let e = yhat[p * m + c] - y;
                num += w * e * e;
                den += w * y * y;
            }
        }
    }
    if !(den > 0.0) {
        return Err(LrnrError::invalid("relative misfit of an all-zero dataset"));
    }
    Ok((num / den).sqrt())
}

/// Train from `state.epoch` up to (excluding) epoch `until`, appending to
/// `history`. On a numerical failure the model keeps the last good parameters
/// and `state` describes the last completed epoch.
pub fn train_epochs(
    model: &mut MetaModel,
    ds: &WaveDataset,
    config: &TrainConfig,
    state: &mut TrainState,
    until: usize,
    history: &mut Vec<HistoryRow>,
) -> Result<TrainOutcome> {
    config.validate()?;
    ds.validate()?;
    if config.batch > ds.len() {
        return Err(LrnrError::invalid(format!(
            "batch of {} snapshots exceeds the {} available",
            config.batch,
            ds.len()
        )));
    }
    if state.adam.m.len() != model.parameter_count() {
        return Err(LrnrError::ShapeMismatch("optimizer state does not match the model".into()));
    }
    let mut view: Option<(f64, Cow<'_, WaveDataset>)> = None;
    let mut outcome = TrainOutcome {
        epochs_run: 0,
        stopped_early: false,
        last_rel_l2: None,
    };
    while state.epoch < until {
        let epoch = state.epoch;
        let radius = mollifier_radius(epoch, config.mollifier_w0, config.epochs);
        if view.as_ref().map_or(true, |(r, _)| *r != radius) {
            view = Some((radius, mollified_view(ds, radius, config.boundary)?));
        }
        let data: &WaveDataset = view.as_ref().expect("view set above").1.as_ref();

        let mut epoch_rng = rng::stream(config.seed, epoch as u64);
        let batches = sample_batch(data.len(), config.batch, &mut epoch_rng)?;
        let alpha = state.alpha();
        let saved = params_to_vec(model);
        let mut adam = state.adam.clone();
        let sums = match run_epoch(model, data, &batches, config, alpha, state.lr, &mut adam) {
            Ok(sums) => sums,
            Err(e) => {
                vec_to_params(model, &saved)?;
                return Err(e);
            }
        };
        let n = data.len() as f64;
        let [misfit, sparse, ortho, total] = sums.map(|v| v / n);

        state.adam = adam;
        state.radius = radius;
        if !state.switched && misfit < config.tau {
            state.switched = true;
            state.lr = config.lr0;
            state.plateau = Default::default();
        } else {
            state.lr = plateau_lr(state.lr, &mut state.plateau, total, &config.plateau);
        }
        state.epoch += 1;
        outcome.epochs_run += 1;
        history.push(HistoryRow {
            epoch,
            misfit,
            reg_sparse: sparse,
            reg_ortho: ortho,
            total,
            alpha: state.alpha(),
            lr: state.lr,
            radius,
        });

        if let Some(target) = config.target_rel_l2 {
            if state.epoch % config.check_every == 0 {
                let err = relative_l2(model, ds)?;
                outcome.last_rel_l2 = Some(err);
                if err < target {
                    outcome.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(outcome)
}

fn run_epoch(
    model: &mut MetaModel,
    data: &WaveDataset,
    batches: &[Vec<usize>],
    config: &TrainConfig,
    alpha: f64,
    lr: f64,
    adam: &mut AdamState,
) -> Result<[f64; 4]> {
    let mut sums = [0.0; 4];
    let mut params = params_to_vec(model);
    for idx in batches {
        let batch: Vec<&Snapshot> = idx.iter().map(|&i| &data.snapshots[i]).collect();
        let (loss, grads) = backprop(model, &batch, config, alpha)?;
        adam_step(&mut params, &grads.flatten(), adam, lr);
        if params.iter().any(|v| !v.is_finite()) {
            return Err(LrnrError::NonFiniteGradient {
                block: "parameter update".into(),
            });
        }
        vec_to_params(model, &params)?;
        let wgt = batch.len() as f64;
        sums[0] += wgt * loss.misfit;
        sums[1] += wgt * loss.sparse;
        sums[2] += wgt * loss.ortho;
        sums[3] += wgt * loss.total;
    }
    Ok(sums)
}

/// Fresh training run over `config.epochs` epochs.
pub fn train_loop(
    model: &mut MetaModel,
    ds: &WaveDataset,
    config: &TrainConfig,
) -> Result<(TrainState, Vec<HistoryRow>, TrainOutcome)> {
    let mut state = TrainState::new(model.parameter_count(), config);
    let mut history = Vec::new();
    let outcome = train_epochs(model, ds, config, &mut state, config.epochs, &mut history)?;
    Ok((state, history, outcome))
}
