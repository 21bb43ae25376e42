//! File formats written and read by the command-line tool.

use crate::solver::{FilmState, StepReport};
use crate::vector::PlaneVector;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Fewest azimuthal segments a revolved surface may have.
pub const MIN_AZIMUTHAL: usize = 4;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("need at least {MIN_AZIMUTHAL} azimuthal segments, got {0}")]
    TooFewSegments(usize),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.into(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |e| IoError::Csv { path: path.into(), message: e.to_string() }
}

pub fn create_dir(dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(file_err(dir))
}

/// One row of the per-step history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub step: usize,
    pub t: f64,
    #[serde(rename = "W")]
    pub energy: f64,
    #[serde(rename = "V")]
    pub volume: f64,
    pub rel_vol_err: f64,
    /// Inner contact of the first component; empty in axis mode.
    pub c_l: Option<f64>,
    pub c_r: f64,
    pub newton_iters: usize,
    pub residual: f64,
}

impl SeriesRow {
    pub fn initial(state: &[FilmState], energy: f64, volume: f64) -> Self {
        Self {
            step: 0,
            t: 0.0,
            energy,
            volume,
            rel_vol_err: 0.0,
            c_l: state[0].contacts.left,
            c_r: state[0].contacts.right,
            newton_iters: 0,
            residual: 0.0,
        }
    }

    pub fn from_report(report: &StepReport, state: &[FilmState], initial_volume: f64) -> Self {
        Self {
            step: report.step,
            t: report.t,
            energy: report.energy,
            volume: report.volume,
            rel_vol_err: (report.volume - initial_volume) / initial_volume.abs(),
            c_l: state[0].contacts.left,
            c_r: state[0].contacts.right,
            newton_iters: report.newton_iterations,
            residual: report.residual,
        }
    }
}

/// Buffered CSV writer for rows of one serializable type.
pub struct CsvTable<T> {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
    _row: std::marker::PhantomData<T>,
}

impl<T: Serialize> CsvTable<T> {
    pub fn create(path: &Path) -> Result<Self, IoError> {
        let file = File::create(path).map_err(file_err(path))?;
        Ok(Self { path: path.into(), writer: csv::Writer::from_writer(BufWriter::new(file)), _row: Default::default() })
    }

    pub fn push(&mut self, row: &T) -> Result<(), IoError> {
        self.writer.serialize(row).map_err(csv_err(&self.path))
    }

    pub fn flush(&mut self) -> Result<(), IoError> {
        self.writer.flush().map_err(file_err(&self.path))
    }
}

/// A `t,value` sample for angle and migration histories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeValue {
    pub t: f64,
    pub value: f64,
}

/// One node of a snapshot file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub rho: f64,
    pub r: f64,
    pub z: f64,
    pub mu: f64,
}

pub fn snapshot_rows(state: &FilmState) -> Vec<SnapshotRow> {
    let n = state.n_elements();
    state
        .curve
        .nodes()
        .iter()
        .zip(state.physical_mu())
        .enumerate()
        .map(|(j, (p, mu))| SnapshotRow { rho: j as f64 / n as f64, r: p.r, z: p.z, mu })
        .collect()
}

/// Snapshot file name for a step and film component.
pub fn snapshot_name(step: usize, component: usize) -> String {
    format!("snapshot_{step:06}_c{component}.csv")
}

pub fn write_snapshot(path: &Path, state: &FilmState) -> Result<(), IoError> {
    let mut table = CsvTable::create(path)?;
    for row in snapshot_rows(state) {
        table.push(&row)?;
    }
    table.flush()
}

pub fn read_snapshot(path: &Path) -> Result<Vec<SnapshotRow>, IoError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let rows = reader.deserialize().collect::<Result<Vec<SnapshotRow>, _>>().map_err(csv_err(path))?;
    if rows.len() < 2 {
        return Err(IoError::Csv { path: path.into(), message: format!("need at least 2 nodes, got {}", rows.len()) });
    }
    if let Some(bad) = rows.iter().position(|row| !(row.r.is_finite() && row.z.is_finite()) || row.r < 0.0) {
        return Err(IoError::Csv { path: path.into(), message: format!("node {bad} is not a finite point with r >= 0") });
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let file = File::create(path).map_err(file_err(path))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| IoError::File { path: path.into(), source: std::io::Error::other(e) })?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(file_err(path))
}

/// Triangulated surface of revolution about the z axis.
#[derive(Clone, Debug, PartialEq)]
pub struct RevolvedMesh {
    pub vertices: Vec<[f64; 3]>,
    /// Zero-based vertex indices.
    pub triangles: Vec<[usize; 3]>,
}

impl RevolvedMesh {
    /// Revolves a profile through `n_phi` equal azimuthal segments. Vertex
    /// `j·n_phi + k` is node `j` at angle `2πk/n_phi`; the seam reuses `k = 0`.
    pub fn revolve(profile: &[PlaneVector], n_phi: usize) -> Result<Self, IoError> {
        if n_phi < MIN_AZIMUTHAL {
            return Err(IoError::TooFewSegments(n_phi));
        }
        let mut vertices = Vec::with_capacity(profile.len() * n_phi);
        for p in profile {
            for k in 0..n_phi {
                let (s, c) = (2.0 * std::f64::consts::PI * k as f64 / n_phi as f64).sin_cos();
                vertices.push([p.r * c, p.r * s, p.z]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * profile.len().saturating_sub(1) * n_phi);
        for j in 0..profile.len().saturating_sub(1) {
            for k in 0..n_phi {
                let k1 = (k + 1) % n_phi;
                let (a, b) = (j * n_phi + k, j * n_phi + k1);
                let (c, d) = (a + n_phi, b + n_phi);
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            }
        }
        Ok(Self { vertices, triangles })
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
            })
            .sum()
    }

    /// Wavefront OBJ text (one-based indices).
    pub fn write_obj(&self, path: &Path) -> Result<(), IoError> {
        let file = File::create(path).map_err(file_err(path))?;
        let mut out = BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            writeln!(out, "# surface of revolution: {} vertices, {} triangles", self.vertices.len(), self.triangles.len())?;
            for v in &self.vertices {
                writeln!(out, "v {:.12e} {:.12e} {:.12e}", v[0], v[1], v[2])?;
            }
            for t in &self.triangles {
                writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
            }
            out.flush()
        };
        body().map_err(file_err(path))
    }
}
