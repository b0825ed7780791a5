//! Randomized linear sketching for distance evaluation in high dimension.
//!
//! A sketch is an n×m matrix S with orthonormal columns spanning a random
//! subspace of the row space of the input cloud: a Gaussian J×m matrix G is
//! drawn, B = Pᵀ G is formed and S is the Q factor of B = S R. Norms are then
//! taken as ‖Sᵀx‖, which never exceeds ‖x‖ and discards noise components
//! orthogonal to the dominant directions of the data.
//!
//! Only norms go through the sketch; points and difference vectors always
//! stay in R^n.

use std::path::Path;

use nalgebra::DMatrix;

use crate::cloud::{load_cloud, save_cloud, PointCloud};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Relative threshold on |R_kk| below which a sketch column counts as lost.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SketchMatrix {
    n: usize,
    m: usize,
    /// Sᵀ stored row-major: row k is column k of S.
    transposed: Vec<f64>,
}

impl SketchMatrix {
    /// The n×n identity: sketched norms equal Euclidean norms.
    pub fn identity(n: usize) -> Self {
        let mut transposed = vec![0.0; n * n];
        for k in 0..n {
            transposed[k * n + k] = 1.0;
        }
        Self { n, m: n, transposed }
    }

    /// Builds S from its columns. Orthonormality is checked to 1e-10.
    pub fn from_columns(n: usize, columns: &[Vec<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Config("a sketch needs at least one column".into()));
        }
        let mut transposed = Vec::with_capacity(n * columns.len());
        for col in columns {
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: col.len(),
                });
            }
            transposed.extend_from_slice(col);
        }
        let s = Self {
            n,
            m: columns.len(),
            transposed,
        };
        let dev = s.orthonormality_error();
        if dev > 1e-10 {
            return Err(Error::Degenerate(format!(
                "sketch columns are not orthonormal (max deviation {dev:e})"
            )));
        }
        Ok(s)
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn sketch_dim(&self) -> usize {
        self.m
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.transposed[k * self.n..(k + 1) * self.n]
    }

    /// max |(SᵀS − I)_{ab}|.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..self.m {
            for b in a..self.m {
                let dot: f64 = self
                    .column(a)
                    .iter()
                    .zip(self.column(b))
                    .map(|(x, y)| x * y)
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Sᵀx written into `out` (length m). No dimension check.
    #[inline]
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let row = &self.transposed[k * self.n..(k + 1) * self.n];
            *slot = row.iter().zip(x).map(|(s, v)| s * v).sum();
        }
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.m];
        self.project_into(x, &mut out);
        Ok(out)
    }

    /// Row-major J×m matrix of sketched coordinates Sᵀp_j.
    pub fn project_cloud(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        if cloud.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: cloud.dim(),
            });
        }
        let mut out = vec![0.0; cloud.len() * self.m];
        for (row, p) in out.chunks_exact_mut(self.m).zip(cloud.iter()) {
            self.project_into(p, row);
        }
        Ok(out)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// ‖Sᵀx‖₂.
    pub fn norm(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok((0..self.m)
            .map(|k| {
                let row = &self.transposed[k * self.n..(k + 1) * self.n];
                let c: f64 = row.iter().zip(x).map(|(s, v)| s * v).sum();
                c * c
            })
            .sum::<f64>()
            .sqrt())
    }

    /// ‖Sᵀ(x − y)‖₂.
    pub fn dist(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.norm(&diff)
    }

    /// Writes S as CSV: n rows, m columns.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut data = vec![0.0; self.n * self.m];
        for k in 0..self.m {
            for i in 0..self.n {
                data[i * self.m + k] = self.transposed[k * self.n + i];
            }
        }
        save_cloud(&PointCloud::from_flat(self.m, data)?, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let rows = load_cloud(path)?;
        let (n, m) = (rows.len(), rows.dim());
        let columns: Vec<Vec<f64>> = (0..m)
            .map(|k| (0..n).map(|i| rows.point(i)[k]).collect())
            .collect();
        Self::from_columns(n, &columns)
    }
}

/// Squared Euclidean distance between two equal-length coordinate rows.
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sketch of dimension `m` built from the rows of `points`.
pub fn build_sketch(points: &PointCloud, m: usize, rng: &mut Rng) -> Result<SketchMatrix> {
    let (j, n) = (points.len(), points.dim());
    if m == 0 || m > n {
        return Err(Error::Config(format!(
            "sketch dimension {m} must lie in 1..={n}"
        )));
    }
    let gaussian = DMatrix::from_fn(j, m, |_, _| rng.normal());
    let p = DMatrix::from_row_slice(j, n, points.as_flat());
    let b = p.transpose() * gaussian;

    let qr = b.qr();
    let r = qr.r();
    let scale = (0..m).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    let rank = (0..m)
        .filter(|&k| r[(k, k)].abs() > RANK_TOL * scale)
        .count();
    if scale == 0.0 || rank < m {
        return Err(Error::DegenerateSketch { requested: m, rank });
    }
    let q = qr.q();
    let mut transposed = Vec::with_capacity(n * m);
    for k in 0..m {
        transposed.extend(q.column(k).iter().copied());
    }
    Ok(SketchMatrix { n, m, transposed })
}
