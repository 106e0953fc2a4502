use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    /// Relative improvement over the best loss needed to reset the counter.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.98,
            patience: 10,
            threshold: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub best: f64,
    pub bad_epochs: usize,
}

impl Default for PlateauState {
    fn default() -> Self {
        PlateauState {
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }
}

/// Record `loss` and return the learning rate for the next epoch. The rate
/// decays once `patience` consecutive epochs fail to beat `best·(1 − threshold)`.
pub fn plateau_lr(lr: f64, state: &mut PlateauState, loss: f64, config: &PlateauConfig) -> f64 {
    if loss < state.best * (1.0 - config.threshold) {
        state.best = loss;
        state.bad_epochs = 0;
        return lr;
    }
    state.bad_epochs += 1;
    if state.bad_epochs >= config.patience {
        state.bad_epochs = 0;
        lr * config.factor
    } else {
        lr
    }
}

/// `w0·max(0, (n − 2i)/n)`: linear decay reaching zero halfway through.
pub fn mollifier_radius(epoch: usize, w0: f64, n_epochs: usize) -> f64 {
    if n_epochs == 0 {
        return 0.0;
    }
    let n = n_epochs as f64;
    w0 * ((n - 2.0 * epoch as f64) / n).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_losses_decay_once() {
        let cfg = PlateauConfig::default();
        let mut st = PlateauState::default();
        let mut lr = plateau_lr(1.0, &mut st, 5.0, &cfg);
        let mut decays = 0;
        for _ in 0..10 {
            let next = plateau_lr(lr, &mut st, 5.0, &cfg);
            if next != lr {
                decays += 1;
            }
            lr = next;
        }
        assert_eq!(decays, 1);
        assert_eq!(lr, 0.98);
    }

    #[test]
    fn radius_schedule() {
        assert_eq!(mollifier_radius(0, 0.2, 100), 0.2);
        assert_eq!(mollifier_radius(25, 0.2, 100), 0.1);
        assert_eq!(mollifier_radius(50, 0.2, 100), 0.0);
        assert_eq!(mollifier_radius(90, 0.2, 100), 0.0);
    }
}
