//! Fill-distance and support-size estimation.
//!
//! Each reconstruction point is a "service center" for about ν = ⌊J/I⌋ input
//! points. The attraction support h₁ is the smallest radius, in multiples of
//! the fill-distance h₀ of P, that gives every point of Q⁰ at least ν input
//! points; the repulsion support h₂ is the same quantity computed on a
//! uniform random subsample of P of size I against itself.
//!
//! Ball counts are closed (`dist ≤ r`) and never count the center itself:
//! when a query point is a copy of a counted point, one copy is skipped.
//!
//! Support radii should stay below the reach of the underlying manifold;
//! nothing here can check that for unknown data.

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sketch::{sq_dist, SketchMatrix};
use crate::stats::median;

/// Largest admissible c₁.
pub const C_MAX: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportParams {
    /// Fill-distance of P.
    pub h0: f64,
    pub nu: usize,
    pub c1: f64,
    pub h_hat0: f64,
    /// Support of the attraction weights (Q against P).
    pub h1: f64,
    /// Support of the repulsion weights (Q against Q).
    pub h2: f64,
}

/// Median over points of the sketched distance to the nearest other point.
pub fn fill_distance(cloud: &PointCloud, sketch: &SketchMatrix) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::Degenerate(
            "fill-distance needs at least two points".into(),
        ));
    }
    let m = sketch.sketch_dim();
    let coords = sketch.project_cloud(cloud)?;
    let nearest: Vec<f64> = coords
        .chunks_exact(m)
        .enumerate()
        .map(|(i, a)| {
            coords
                .chunks_exact(m)
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| sq_dist(a, b))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    Ok(median(&nearest).expect("at least two points"))
}

/// Sketched distances from `q` to every point of `points` (rows of sketched
/// coordinates), skipping one point whose full coordinates equal `q`.
fn distances_excluding_self(
    q: &[f64],
    q_sketched: &[f64],
    points: &PointCloud,
    points_sketched: &[f64],
    m: usize,
) -> Vec<f64> {
    let mut skipped = false;
    let mut out = Vec::with_capacity(points.len());
    for (p, ps) in points.iter().zip(points_sketched.chunks_exact(m)) {
        if !skipped && p == q {
            skipped = true;
            continue;
        }
        out.push(sq_dist(q_sketched, ps).sqrt());
    }
    out
}

/// Number of points of `points` within the closed sketched ball of radius
/// `radius` around `q`, excluding `q` itself.
pub fn count_within(
    q: &[f64],
    points: &PointCloud,
    radius: f64,
    sketch: &SketchMatrix,
) -> Result<usize> {
    let m = sketch.sketch_dim();
    let qs = sketch.project(q)?;
    let ps = sketch.project_cloud(points)?;
    Ok(distances_excluding_self(q, &qs, points, &ps, m)
        .into_iter()
        .filter(|&d| d <= radius)
        .count())
}

/// Smallest c ≥ 1 such that every point of `queries` has at least `nu`
/// points of `points` within sketched distance c·h₀. Returns (c₁, ĥ₀ = c₁h₀).
///
/// The minimum is attained exactly: it is the largest ν-th neighbour distance
/// over the queries, divided by h₀.
pub fn guarantee_radius(
    points: &PointCloud,
    queries: &PointCloud,
    h0: f64,
    nu: usize,
    sketch: &SketchMatrix,
) -> Result<(f64, f64)> {
    if nu == 0 {
        return Err(Error::Config("nu must be at least 1".into()));
    }
    if !(h0 > 0.0 && h0.is_finite()) {
        return Err(Error::Config(format!("h0 must be positive, got {h0}")));
    }
    if queries.dim() != points.dim() {
        return Err(Error::DimensionMismatch {
            expected: points.dim(),
            got: queries.dim(),
        });
    }
    let m = sketch.sketch_dim();
    let ps = sketch.project_cloud(points)?;
    let qs = sketch.project_cloud(queries)?;

    let mut radius = h0;
    for (q, q_sk) in queries.iter().zip(qs.chunks_exact(m)) {
        let mut d = distances_excluding_self(q, q_sk, points, &ps, m);
        if d.len() < nu {
            return Err(Error::UnreachableSupport { nu, c_max: C_MAX });
        }
        let (_, kth, _) = d.select_nth_unstable_by(nu - 1, f64::total_cmp);
        radius = radius.max(*kth);
    }
    let c1 = radius / h0;
    if c1 > C_MAX {
        return Err(Error::UnreachableSupport { nu, c_max: C_MAX });
    }
    Ok((c1, radius))
}

/// h₁ from (P, Q⁰) and h₂ from a random subsample of P of size |Q⁰|.
pub fn estimate_supports(
    points: &PointCloud,
    initial: &PointCloud,
    sketch: &SketchMatrix,
    rng: &mut Rng,
) -> Result<SupportParams> {
    let (j, i) = (points.len(), initial.len());
    if i == 0 || i > j {
        return Err(Error::Config(format!(
            "reconstruction size {i} must lie in 1..={j} (input size)"
        )));
    }
    let h0 = fill_distance(points, sketch)?;
    let nu = j / i;
    let (c1, h_hat0) = guarantee_radius(points, initial, h0, nu, sketch)?;

    let h2 = if i >= 2 {
        let sample = points.select(&rng.sample_indices(j, i))?;
        let h0_sample = fill_distance(&sample, sketch)?;
        guarantee_radius(&sample, &sample, h0_sample, 1, sketch)?.1
    } else {
        // a single point has no repulsion partners
        h_hat0
    };

    Ok(SupportParams {
        h0,
        nu,
        c1,
        h_hat0,
        h1: h_hat0,
        h2,
    })
}

/// ⌊2^{1.5d}·ν⌋: expected number of input points inside radius 2√2·ĥ₀ on a
/// d-dimensional manifold.
pub fn predicted_support_count(d: u32, nu: usize) -> usize {
    (2f64.powf(1.5 * f64::from(d)) * nu as f64).floor() as usize
}
