//! Dense point clouds and their CSV form.
//!
//! The CSV format is one point per line, comma-separated decimal reals, no
//! header, `.` as decimal separator and LF line endings. Values are written
//! with the shortest representation that parses back to the same `f64`, so
//! `load_cloud(save_cloud(c)) == c` bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered points in R^n, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
    /// Optional per-point parameter coordinates (e.g. the generating
    /// parameters of a synthetic sample).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<Vec<f64>>>,
}

impl PointCloud {
    /// Builds a cloud from flat row-major data.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidCloud("ambient dimension must be positive".into()));
        }
        if data.is_empty() {
            return Err(Error::InvalidCloud("a cloud needs at least one point".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::InvalidCloud(format!(
                "{} values do not split into rows of {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidCloud(format!(
                "non-finite coordinate at point {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            dim,
            data,
            labels: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidCloud("a cloud needs at least one point".into()))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidCloud(format!(
                    "point {i} has {} coordinates, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(dim, data)
    }

    pub fn with_labels(mut self, labels: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::InvalidCloud(format!(
                "{} labels for {} points",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn labels(&self) -> Option<&[Vec<f64>]> {
        self.labels.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    /// Always false for a valid cloud; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    /// Sub-cloud of the given rows, in order. Labels follow their points.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.point(i));
        }
        let mut out = Self::from_flat(self.dim, data)?;
        if let Some(labels) = &self.labels {
            out.labels = Some(indices.iter().map(|&i| labels[i].clone()).collect());
        }
        Ok(out)
    }

    /// Applies `f` to every coordinate, keeping labels.
    pub fn map_coords(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Result<Self> {
        let dim = self.dim;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k / dim, k % dim, v))
            .collect();
        let mut out = Self::from_flat(dim, data)?;
        out.labels = self.labels.clone();
        Ok(out)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 20);
        for row in self.iter() {
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                // Debug formatting is the shortest round-trip representation
                write!(out, "{v:?}").expect("writing to a String cannot fail");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut dim = None;
        let mut data = Vec::new();
        for (line_idx, line) in text.lines().enumerate() {
            let line_no = line_idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            let expected = *dim.get_or_insert(cells.len());
            if cells.len() != expected {
                return Err(Error::RaggedRow {
                    path: origin.to_path_buf(),
                    line: line_no,
                    expected,
                    found: cells.len(),
                });
            }
            for (col, cell) in cells.iter().enumerate() {
                let value: f64 = cell.trim().parse().map_err(|_| Error::BadCell {
                    path: origin.to_path_buf(),
                    line: line_no,
                    column: col + 1,
                    cell: (*cell).to_string(),
                })?;
                if !value.is_finite() {
                    return Err(Error::NonFiniteCell {
                        path: origin.to_path_buf(),
                        line: line_no,
                        column: col + 1,
                    });
                }
                data.push(value);
            }
        }
        match dim {
            None => Err(Error::EmptyFile(origin.to_path_buf())),
            Some(dim) => Self::from_flat(dim, data),
        }
    }
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PointCloud::parse_csv(&text, path)
}

pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, cloud.to_csv_string()).map_err(|e| Error::io(path, e))
}

/// Euclidean norm of a full-dimension vector.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Full-dimension Euclidean distance, for validation against sketched values.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
