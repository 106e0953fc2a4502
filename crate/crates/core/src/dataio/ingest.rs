//! Conversion of external solver output into the dataset format.
//!
//! Each snapshot is a comma-separated text table with one row per point,
//! `x_1, …, x_d, u_1, …, u_m, w`, where `w` is the cell volume of the finest
//! patch covering the point. Lines starting with `#` are ignored.

use std::io::Read;
use std::path::Path;

use super::dataset::{GridKind, Snapshot, WaveDataset};
use crate::error::{LrnrError, Result};
use crate::numerics::Matrix;

pub fn parse_table<R: Read>(reader: R, time: f64, spatial_dim: usize, output_dim: usize) -> Result<Snapshot> {
    let width = spatial_dim + output_dim + 1;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(LrnrError::ShapeMismatch(format!(
                "row {}: {} columns, expected {width}",
                line + 1,
                rec.len()
            )));
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| LrnrError::Format(format!("row {}: not a number: {field:?}", line + 1)))?;
            rows.push(v);
        }
    }
    let p = rows.len() / width;
    let mut points = Matrix::zeros(p, spatial_dim);
    let mut values = Matrix::zeros(p, output_dim);
    let mut weights = Vec::with_capacity(p);
    for (i, row) in rows.chunks_exact(width).enumerate() {
        points.row_mut(i).copy_from_slice(&row[..spatial_dim]);
        values.row_mut(i).copy_from_slice(&row[spatial_dim..spatial_dim + output_dim]);
        weights.push(row[width - 1]);
    }
    Ok(Snapshot {
        time,
        points,
        values,
        weights,
    })
}

/// Build an adaptive dataset from `(time, table path)` pairs.
pub fn ingest_tables(tables: &[(f64, &Path)], spatial_dim: usize, output_dim: usize) -> Result<WaveDataset> {
    let snapshots = tables
        .iter()
        .map(|&(t, path)| parse_table(std::fs::File::open(path)?, t, spatial_dim, output_dim))
        .collect::<Result<Vec<_>>>()?;
    let ds = WaveDataset {
        spatial_dim,
        output_dim,
        grid_kind: GridKind::Adaptive,
        grid: None,
        snapshots,
    };
    ds.validate()?;
    Ok(ds)
}
