//! CSV files for paths and observations, with a JSON sidecar for grid metadata.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{LatentPath, NoiseCovariance, ObservationSet, TimeGrid};
use crate::error::{Error, Result};

/// Sidecar describing the grid and observation operator of an `observations.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationMeta {
    pub delta: f64,
    pub n_steps: usize,
    /// Row-major `G`.
    pub g: Vec<Vec<f64>>,
    pub sigma_noise: Vec<Vec<f64>>,
    pub seed: Option<u64>,
    pub x0: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

impl ObservationMeta {
    pub fn from_observations(obs: &ObservationSet, seed: Option<u64>) -> Self {
        Self {
            delta: obs.grid.delta,
            n_steps: obs.grid.n_steps,
            g: rows_of(&obs.g),
            sigma_noise: rows_of(&obs.sigma_noise),
            seed,
            x0: obs.x0.iter().copied().collect(),
        }
    }
}

fn write_rows<W: Write>(
    w: W,
    prefix: char,
    dim: usize,
    rows: impl Iterator<Item = (f64, DVector<f64>)>,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["time".to_string()];
    header.extend((1..=dim).map(|k| format!("{prefix}{k}")));
    out.write_record(&header)?;
    for (t, x) in rows {
        let mut rec = vec![t.to_string()];
        rec.extend(x.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

fn read_rows<R: Read>(r: R, prefix: char) -> Result<Vec<(f64, DVector<f64>)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let dim = header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("time".to_string())
        .chain((1..=dim).map(|k| format!("{prefix}{k}")))
        .collect();
    if dim == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::invalid(format!(
            "expected header {}, found {}",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("row {}: '{s}' is not a number", line + 1)))
        };
        let t = parse(&rec[0])?;
        let x = (1..=dim).map(|k| parse(&rec[k])).collect::<Result<Vec<_>>>()?;
        rows.push((t, DVector::from_vec(x)));
    }
    Ok(rows)
}

/// Writes `time,x1..xd`.
pub fn write_path_csv<W: Write>(path: &LatentPath, w: W) -> Result<()> {
    let grid = path.grid;
    write_rows(
        w,
        'x',
        path.dim(),
        path.states.iter().enumerate().map(|(n, s)| (grid.time(n), s.clone())),
    )
}

/// Reads a path written by [`write_path_csv`]; rows must sit on a uniform grid.
pub fn read_path_csv<R: Read>(r: R) -> Result<LatentPath> {
    let rows = read_rows(r, 'x')?;
    if rows.len() < 2 {
        return Err(Error::invalid("a path file needs at least two rows"));
    }
    let delta = rows[1].0 - rows[0].0;
    let grid = TimeGrid::new(delta, rows.len() - 1)?;
    for (n, (t, _)) in rows.iter().enumerate() {
        if (t - grid.time(n)).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(Error::invalid(format!("row {} is off the uniform grid", n + 1)));
        }
    }
    LatentPath::new(grid, rows.into_iter().map(|(_, x)| x).collect())
}

/// Writes `observations.csv` (`time,y1..`) and its JSON sidecar.
pub fn write_observations(obs: &ObservationSet, csv_path: &Path, meta_path: &Path, seed: Option<u64>) -> Result<()> {
    let grid = obs.grid;
    write_rows(
        File::create(csv_path)?,
        'y',
        obs.obs_dim(),
        obs.obs_indices.iter().zip(&obs.values).map(|(&n, y)| (grid.time(n), y.clone())),
    )?;
    let meta = ObservationMeta::from_observations(obs, seed);
    let mut f = File::create(meta_path)?;
    serde_json::to_writer_pretty(&mut f, &meta)?;
    writeln!(f)?;
    Ok(())
}

/// Reads observations written by [`write_observations`]. Times are mapped back
/// to grid indices by rounding `t/Δ`.
pub fn read_observations(csv_path: &Path, meta_path: &Path) -> Result<(ObservationSet, ObservationMeta)> {
    let meta: ObservationMeta = serde_json::from_reader(File::open(meta_path)?)?;
    let grid = TimeGrid::new(meta.delta, meta.n_steps)?;
    let rows = read_rows(File::open(csv_path)?, 'y')?;
    let mut indices = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for (t, y) in rows {
        let n = (t / grid.delta).round();
        if n < 0.0 || (t - n * grid.delta).abs() > 1e-6 * grid.delta {
            return Err(Error::invalid(format!("observation time {t} is not on the grid")));
        }
        indices.push(n as usize);
        values.push(y);
    }
    let obs = ObservationSet::new(
        grid,
        DVector::from_vec(meta.x0.clone()),
        indices,
        values,
        matrix_of(&meta.g, "G")?,
        NoiseCovariance::new(matrix_of(&meta.sigma_noise, "sigma_noise")?)?,
    )?;
    Ok((obs, meta))
}
