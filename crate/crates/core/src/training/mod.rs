//! Losses, reverse-mode gradients, Adam and the training loop.

mod adam;
mod backprop;
mod gradcheck;
mod loss;
mod schedule;
mod trainer;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use backprop::{
    backprop, parameter_blocks, params_to_vec, snapshot_output, total_loss, vec_to_params, GradientBundle,
    LossBreakdown,
};
pub use gradcheck::{gradcheck, gradcheck_default, small_meta_network, GradcheckReport};
pub use loss::{misfit, misfit_blend, reg_ortho, reg_sparse};
pub use schedule::{mollifier_radius, plateau_lr, PlateauConfig, PlateauState};
pub use trainer::{relative_l2, train_epochs, train_loop, TrainOutcome};

use crate::error::{LrnrError, Result};
use crate::numerics::Boundary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_sparse: f64,
    pub lambda_ortho: f64,
    pub gamma: f64,
    /// Initial mollifier radius `w0`.
    pub mollifier_w0: f64,
    pub boundary: Boundary,
    /// Allocated epochs `n_epc`; the mollifier schedule is laid out over it.
    pub epochs: usize,
    /// Misfit-switch threshold `τ`.
    pub tau: f64,
    pub lr0: f64,
    pub plateau: PlateauConfig,
    /// Time snapshots per optimization step.
    pub batch: usize,
    pub seed: u64,
    /// Stop once the relative ℓ2 misfit over the unmollified data drops below this.
    pub target_rel_l2: Option<f64>,
    /// Epoch interval for evaluating `target_rel_l2`.
    pub check_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_sparse: 0.0,
            lambda_ortho: 1e-2,
            gamma: 1.05,
            mollifier_w0: 0.0,
            boundary: Boundary::Periodic,
            epochs: 1000,
            tau: 5e-4,
            lr0: 1e-3,
            plateau: PlateauConfig::default(),
            batch: 16,
            seed: 0,
            target_rel_l2: None,
            check_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_sparse", self.lambda_sparse),
            ("lambda_ortho", self.lambda_ortho),
            ("mollifier_w0", self.mollifier_w0),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(LrnrError::invalid(format!("{name} must be finite and nonnegative")));
            }
        }
        let positive = [("gamma", self.gamma), ("tau", self.tau), ("lr0", self.lr0)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LrnrError::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.plateau.factor > 0.0 && self.plateau.factor <= 1.0) || self.plateau.patience == 0 {
            return Err(LrnrError::invalid("plateau factor must lie in (0, 1] and patience be positive"));
        }
        if !(self.plateau.threshold >= 0.0 && self.plateau.threshold < 1.0) {
            return Err(LrnrError::invalid("plateau threshold must lie in [0, 1)"));
        }
        if self.batch == 0 || self.check_every == 0 {
            return Err(LrnrError::invalid("batch and check_every must be positive"));
        }
        if let Some(t) = self.target_rel_l2 {
            if !(t > 0.0) {
                return Err(LrnrError::invalid("target_rel_l2 must be positive"));
            }
        }
        Ok(())
    }
}

/// Tuned settings for the four benchmark problems.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub width: usize,
    pub rank: usize,
    pub depth: usize,
    pub hyper_width: usize,
    pub hyper_depth: usize,
    pub batch: usize,
    pub lambda_sparse: f64,
    pub lambda_ortho: f64,
    pub gamma: f64,
    pub adaptive_sampling: bool,
    pub tau: f64,
}

pub const PRESETS: [Preset; 4] = [
    Preset {
        name: "euler1d",
        width: 1200,
        rank: 150,
        depth: 5,
        hyper_width: 25,
        hyper_depth: 4,
        batch: 16,
        lambda_sparse: 3.65e-18,
        lambda_ortho: 7.76e-3,
        gamma: 1.0005,
        adaptive_sampling: false,
        tau: 5e-4,
    },
    Preset {
        name: "acoustics2d",
        width: 2000,
        rank: 190,
        depth: 4,
        hyper_width: 10,
        hyper_depth: 3,
        batch: 1,
        lambda_sparse: 2.35e-8,
        lambda_ortho: 1.00e-2,
        gamma: 1.0500,
        adaptive_sampling: true,
        tau: 5e-3,
    },
    Preset {
        name: "burgers2d",
        width: 2000,
        rank: 170,
        depth: 4,
        hyper_width: 10,
        hyper_depth: 3,
        batch: 1,
        lambda_sparse: 2.71e-11,
        lambda_ortho: 1.00e-2,
        gamma: 1.0500,
        adaptive_sampling: true,
        tau: 5e-3,
    },
    Preset {
        name: "advection2d",
        width: 2000,
        rank: 180,
        depth: 4,
        hyper_width: 10,
        hyper_depth: 3,
        batch: 1,
        lambda_sparse: 3.48e-10,
        lambda_ortho: 1.00e-2,
        gamma: 1.0650,
        adaptive_sampling: true,
        tau: 5e-3,
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

impl Preset {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda_sparse: self.lambda_sparse,
            lambda_ortho: self.lambda_ortho,
            gamma: self.gamma,
            tau: self.tau,
            batch: self.batch,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: usize,
    pub adam: AdamState,
    pub lr: f64,
    /// Set once the misfit switched from the squared to the absolute form.
    pub switched: bool,
    pub plateau: PlateauState,
    pub radius: f64,
}

impl TrainState {
    pub fn new(parameter_count: usize, config: &TrainConfig) -> Self {
        TrainState {
            epoch: 0,
            adam: AdamState::new(parameter_count),
            lr: config.lr0,
            switched: false,
            plateau: PlateauState::default(),
            radius: mollifier_radius(0, config.mollifier_w0, config.epochs),
        }
    }

    pub fn alpha(&self) -> f64 {
        if self.switched {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-epoch record; `alpha` and `lr` are the values in force after the
/// epoch's switch and plateau updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub misfit: f64,
    pub reg_sparse: f64,
    pub reg_ortho: f64,
    pub total: f64,
    pub alpha: f64,
    pub lr: f64,
    pub radius: f64,
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    crate::dataio::write_csv(path, rows)
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(LrnrError::from)).collect()
}
