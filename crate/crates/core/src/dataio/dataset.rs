//! Wave datasets: time snapshots of point values with quadrature weights.

use std::borrow::Cow;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::container::Container;
use crate::error::{LrnrError, Result};
use crate::numerics::rng::Rng;
use crate::numerics::{box_convolve, Boundary, GridShape, Matrix};

pub const DATASET_MAGIC: &str = "LRNRD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Uniform,
    Adaptive,
}

/// Cell-centered uniform grid: cell `j` along axis `a` is centered at
/// `origin[a] + (j + ½)·spacing[a]`; points are ordered row-major, last axis fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub counts: Vec<usize>,
}

impl UniformGrid {
    /// `counts[a]` cells covering `[lo[a], hi[a]]`.
    pub fn covering(lo: &[f64], hi: &[f64], counts: &[usize]) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != counts.len() || lo.is_empty() || lo.len() > 2 {
            return Err(LrnrError::invalid("uniform grid must be 1d or 2d with matching bounds"));
        }
        if counts.iter().any(|&n| n == 0) || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
            return Err(LrnrError::invalid("uniform grid needs positive counts and hi > lo"));
        }
        Ok(UniformGrid {
            origin: lo.to_vec(),
            spacing: lo.iter().zip(hi).zip(counts).map(|((a, b), &n)| (b - a) / n as f64).collect(),
            counts: counts.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn points(&self) -> Matrix {
        let d = self.dim();
        let mut m = Matrix::zeros(self.len(), d);
        for p in 0..self.len() {
            let mut rem = p;
            for a in (0..d).rev() {
                let j = rem % self.counts[a];
                rem /= self.counts[a];
                m.row_mut(p)[a] = self.origin[a] + (j as f64 + 0.5) * self.spacing[a];
            }
        }
        m
    }

    pub fn shape(&self) -> GridShape {
        GridShape {
            counts: self.counts.clone(),
            spacing: self.spacing.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    /// `P × d`.
    pub points: Matrix,
    /// `P × m`.
    pub values: Matrix,
    pub weights: Vec<f64>,
}

impl Snapshot {
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveDataset {
    pub spatial_dim: usize,
    pub output_dim: usize,
    pub grid_kind: GridKind,
    pub grid: Option<UniformGrid>,
    pub snapshots: Vec<Snapshot>,
}

impl WaveDataset {
    /// Dataset on a uniform grid with cell-volume weights; `values[k]` holds
    /// `P·m` entries for time `times[k]`.
    pub fn uniform(grid: UniformGrid, output_dim: usize, times: &[f64], values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(LrnrError::ShapeMismatch("one value set per time required".into()));
        }
        let points = grid.points();
        let weights = vec![grid.cell_volume(); grid.len()];
        let snapshots = times
            .iter()
            .zip(values)
            .map(|(&time, v)| {
                Ok(Snapshot {
                    time,
                    points: points.clone(),
                    values: Matrix::from_vec(grid.len(), output_dim, v)?,
                    weights: weights.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = WaveDataset {
            spatial_dim: grid.dim(),
            output_dim,
            grid_kind: GridKind::Uniform,
            grid: Some(grid),
            snapshots,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Sample `f(x, t)` on a uniform grid.
    pub fn sample_uniform(
        grid: UniformGrid,
        output_dim: usize,
        times: &[f64],
        mut f: impl FnMut(&[f64], f64) -> Vec<f64>,
    ) -> Result<Self> {
        let points = grid.points();
        let values = times
            .iter()
            .map(|&t| (0..points.rows()).flat_map(|p| f(points.row(p), t)).collect())
            .collect();
        WaveDataset::uniform(grid, output_dim, times, values)
    }

    pub fn validate(&self) -> Result<()> {
        if self.snapshots.is_empty() {
            return Err(LrnrError::invalid("dataset has no snapshots"));
        }
        if self.spatial_dim == 0 || self.output_dim == 0 {
            return Err(LrnrError::invalid("dataset dimensions must be positive"));
        }
        match (self.grid_kind, &self.grid) {
            (GridKind::Uniform, None) => return Err(LrnrError::invalid("uniform dataset without grid")),
            (GridKind::Uniform, Some(g)) if g.dim() != self.spatial_dim => {
                return Err(LrnrError::ShapeMismatch("grid dimension differs from spatial dimension".into()))
            }
            _ => {}
        }
        for (k, s) in self.snapshots.iter().enumerate() {
            let p = s.points.rows();
            if s.points.cols() != self.spatial_dim
                || s.values.rows() != p
                || s.values.cols() != self.output_dim
                || s.weights.len() != p
            {
                return Err(LrnrError::ShapeMismatch(format!("snapshot {k}")));
            }
            if let Some(g) = &self.grid {
                if self.grid_kind == GridKind::Uniform && g.len() != p {
                    return Err(LrnrError::ShapeMismatch(format!("snapshot {k}: {p} points on a grid of {}", g.len())));
                }
            }
            if !s.time.is_finite() || !s.points.is_finite() || !s.values.is_finite() {
                return Err(LrnrError::invalid(format!("snapshot {k}: non-finite entry")));
            }
            if s.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                return Err(LrnrError::invalid(format!("snapshot {k}: weights must be positive")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.set_meta("spatial_dim", &self.spatial_dim)?;
        c.set_meta("output_dim", &self.output_dim)?;
        c.set_meta("grid_kind", &self.grid_kind)?;
        c.set_meta("grid", &self.grid)?;
        let records: Vec<usize> = self.snapshots.iter().map(Snapshot::len).collect();
        c.set_meta("snapshot_points", &records)?;
        c.push("times", vec![self.len()], self.times())?;
        let width = self.spatial_dim + self.output_dim + 1;
        for (k, s) in self.snapshots.iter().enumerate() {
            let mut rows = Vec::with_capacity(s.len() * width);
            for p in 0..s.len() {
                rows.extend_from_slice(s.points.row(p));
                rows.extend_from_slice(s.values.row(p));
                rows.push(s.weights[p]);
            }
            c.push(format!("snapshot.{k}"), vec![s.len(), width], rows)?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let spatial_dim: usize = c.meta("spatial_dim")?;
        let output_dim: usize = c.meta("output_dim")?;
        let counts: Vec<usize> = c.meta("snapshot_points")?;
        let times = c.take("times", &[counts.len()])?;
        let width = spatial_dim + output_dim + 1;
        let mut snapshots = Vec::with_capacity(counts.len());
        for (k, &p) in counts.iter().enumerate() {
            let rows = c.take(&format!("snapshot.{k}"), &[p, width])?;
            let mut points = Matrix::zeros(p, spatial_dim);
            let mut values = Matrix::zeros(p, output_dim);
            let mut weights = Vec::with_capacity(p);
            for (i, row) in rows.chunks_exact(width).enumerate() {
                points.row_mut(i).copy_from_slice(&row[..spatial_dim]);
                values.row_mut(i).copy_from_slice(&row[spatial_dim..spatial_dim + output_dim]);
                weights.push(row[width - 1]);
            }
            snapshots.push(Snapshot {
                time: times[k],
                points,
                values,
                weights,
            });
        }
        let ds = WaveDataset {
            spatial_dim,
            output_dim,
            grid_kind: c.meta("grid_kind")?,
            grid: c.meta("grid")?,
            snapshots,
        };
        ds.validate()?;
        Ok(ds)
    }
}

pub fn save_dataset(ds: &WaveDataset, path: &Path) -> Result<()> {
    ds.validate()?;
    ds.to_container()?.write(path, DATASET_MAGIC, DATASET_VERSION)
}

pub fn load_dataset(path: &Path) -> Result<WaveDataset> {
    WaveDataset::from_container(&Container::read(path, DATASET_MAGIC, DATASET_VERSION)?)
}

/// Each snapshot's values box-filtered with radius `w`; `w = 0` borrows the input.
pub fn mollified_view(ds: &WaveDataset, w: f64, boundary: Boundary) -> Result<Cow<'_, WaveDataset>> {
    if w == 0.0 {
        return Ok(Cow::Borrowed(ds));
    }
    let grid = match (ds.grid_kind, &ds.grid) {
        (GridKind::Uniform, Some(g)) => g.shape(),
        _ => {
            return Err(LrnrError::Unsupported(
                "mollification requires a uniform-grid dataset".into(),
            ))
        }
    };
    let mut out = ds.clone();
    for snap in &mut out.snapshots {
        for c in 0..ds.output_dim {
            let smoothed = box_convolve(&snap.values.column(c), &grid, w, boundary)?;
            snap.values.set_column(c, &smoothed);
        }
    }
    Ok(Cow::Owned(out))
}

/// One epoch of snapshot indices: a seeded permutation cut into batches of
/// `batch` (the final batch may be shorter).
pub fn sample_batch(n: usize, batch: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if batch == 0 || batch > n {
        return Err(LrnrError::invalid(format!("batch size {batch} for {n} snapshots")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    Ok(perm.chunks(batch).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points_cell_centered() {
        let g = UniformGrid::covering(&[0.0, -1.0], &[1.0, 1.0], &[2, 4]).unwrap();
        let p = g.points();
        assert_eq!(p.row(0), &[0.25, -0.75]);
        assert_eq!(p.row(1), &[0.25, -0.25]);
        assert_eq!(p.row(4), &[0.75, -0.75]);
        assert!((g.cell_volume() * g.len() as f64 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn batches_partition_epoch() {
        let mut rng = crate::numerics::rng::seeded(5);
        let b = sample_batch(10, 4, &mut rng).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(sample_batch(3, 4, &mut rng).is_err());
    }
}
