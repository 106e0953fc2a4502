//! Analytic datasets on uniform grids.

use serde::{Deserialize, Serialize};

use super::burgers::{burgers_riemann, RiemannSpec};
use super::planar::{planar_wave_solution, PlanarAtomSet};
use crate::dataio::{UniformGrid, WaveDataset};
use crate::error::{LrnrError, Result};

/// `N` equally spaced times in `[t0, t1]`; a degenerate range gives the single time `t0`.
pub fn equispaced_times(snapshots: usize, t0: f64, t1: f64) -> Result<Vec<f64>> {
    if !(t0.is_finite() && t1 >= t0 && t1.is_finite()) {
        return Err(LrnrError::invalid(format!("bad time range [{t0}, {t1}]")));
    }
    if t1 == t0 {
        return Ok(vec![t0]);
    }
    if snapshots < 2 {
        return Err(LrnrError::invalid("a time range needs at least two snapshots"));
    }
    Ok((0..snapshots)
        .map(|k| t0 + (t1 - t0) * k as f64 / (snapshots - 1) as f64)
        .collect())
}

/// A Gaussian bump `exp(−((x − center)/width)²)` advected at `speed` on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvectionParams {
    pub points: usize,
    pub snapshots: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub speed: f64,
    pub center: f64,
    pub width: f64,
}

impl Default for AdvectionParams {
    fn default() -> Self {
        AdvectionParams {
            points: 100,
            snapshots: 81,
            t_start: 0.0,
            t_end: 1.0,
            speed: 0.5,
            center: 0.25,
            width: 0.08,
        }
    }
}

pub fn advection1d_dataset(p: &AdvectionParams) -> Result<WaveDataset> {
    if !(p.width > 0.0) {
        return Err(LrnrError::invalid("bump width must be positive"));
    }
    let grid = UniformGrid::covering(&[0.0], &[1.0], &[p.points])?;
    let times = equispaced_times(p.snapshots, p.t_start, p.t_end)?;
    WaveDataset::sample_uniform(grid, 1, &times, |x, t| {
        let z = (x[0] - p.speed * t - p.center) / p.width;
        vec![(-z * z).exp()]
    })
}

/// Planar wave solution sampled on `[-1, 1]^d` with `cells` cells per axis.
pub fn planar_wave_dataset(atoms: &PlanarAtomSet, cells: usize, times: &[f64]) -> Result<WaveDataset> {
    atoms.validate()?;
    let d = atoms.dim;
    let grid = UniformGrid::covering(&vec![-1.0; d], &vec![1.0; d], &vec![cells; d])?;
    WaveDataset::sample_uniform(grid, 1, times, |x, t| vec![planar_wave_solution(atoms, x, t)])
}

/// Burgers Riemann problem on `[lo, hi]`.
pub fn burgers_riemann_dataset(
    spec: &RiemannSpec,
    domain: (f64, f64),
    points: usize,
    times: &[f64],
) -> Result<WaveDataset> {
    let grid = UniformGrid::covering(&[domain.0], &[domain.1], &[points])?;
    WaveDataset::sample_uniform(grid, 1, times, |x, t| vec![burgers_riemann(spec, x[0], t)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advection_cadence_and_values() {
        let ds = advection1d_dataset(&AdvectionParams::default()).unwrap();
        assert_eq!(ds.len(), 81);
        assert_eq!(ds.times()[80], 1.0);
        let s = &ds.snapshots[0];
        let (p, v) = (0..s.len())
            .map(|i| (s.points[(i, 0)], s.values[(i, 0)]))
            .fold((0.0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        assert!((p - 0.25).abs() < 0.01 && v > 0.99);
    }

    #[test]
    fn degenerate_range_is_initial_data() {
        let p = AdvectionParams {
            t_end: 0.0,
            ..AdvectionParams::default()
        };
        let ds = advection1d_dataset(&p).unwrap();
        assert_eq!(ds.len(), 1);
        let s = &ds.snapshots[0];
        for i in 0..s.len() {
            let z = (s.points[(i, 0)] - 0.25) / 0.08;
            assert_eq!(s.values[(i, 0)], (-z * z).exp());
        }
        assert!(equispaced_times(1, 0.0, 1.0).is_err());
    }

    #[test]
    fn riemann_dataset_shape() {
        let spec = RiemannSpec {
            left: 1.0,
            right: 0.0,
            jump_at: 0.3,
        };
        let times = equispaced_times(5, 0.0, 0.4).unwrap();
        let ds = burgers_riemann_dataset(&spec, (0.0, 1.0), 50, &times).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.snapshots[4].values[(0, 0)], 1.0);
        assert_eq!(ds.snapshots[4].values[(49, 0)], 0.0);
    }
}
