//! Reconstruction quality measures: distance to a clean reference, fill
//! distance, background SNR of images and local-PCA tangent agreement.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::sketch::{sq_dist, SketchMatrix};
use crate::stats;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestErrors {
    /// Sketched distance from each query to its closest reference point.
    pub distances: Vec<f64>,
    /// Index of that closest reference point.
    pub nearest: Vec<usize>,
    pub mean: f64,
    pub rmse: f64,
    pub max: f64,
    pub variance: f64,
}

fn nearest_in(q: &[f64], reference: &[f64], m: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, r) in reference.chunks_exact(m).enumerate() {
        let d2 = sq_dist(q, r);
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    (best.0, best.1.sqrt())
}

pub fn nearest_reference_errors(
    q: &PointCloud,
    reference: &PointCloud,
    sketch: &SketchMatrix,
) -> Result<NearestErrors> {
    if reference.is_empty() {
        return Err(Error::InvalidCloud("reference cloud is empty".into()));
    }
    let m = sketch.sketch_dim();
    let qs = sketch.project_cloud(q)?;
    let rs = sketch.project_cloud(reference)?;
    let (nearest, distances): (Vec<usize>, Vec<f64>) = qs
        .par_chunks_exact(m)
        .map(|p| nearest_in(p, &rs, m))
        .unzip();
    let squares: Vec<f64> = distances.iter().map(|d| d * d).collect();
    Ok(NearestErrors {
        mean: stats::mean(&distances).unwrap_or(0.0),
        rmse: stats::mean(&squares).unwrap_or(0.0).sqrt(),
        max: distances.iter().copied().fold(0.0, f64::max),
        variance: stats::variance(&distances).unwrap_or(0.0),
        distances,
        nearest,
    })
}

/// Largest sketched distance between two points of the cloud.
pub fn sketched_diameter(cloud: &PointCloud, sketch: &SketchMatrix) -> Result<f64> {
    let m = sketch.sketch_dim();
    let ps = sketch.project_cloud(cloud)?;
    let best = ps
        .par_chunks_exact(m)
        .enumerate()
        .map(|(i, a)| {
            ps.chunks_exact(m)
                .skip(i + 1)
                .map(|b| sq_dist(a, b))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(best.sqrt())
}

/// Mean nearest-reference distance over the sketched diameter of the
/// reference.
pub fn relative_error(q: &PointCloud, reference: &PointCloud, sketch: &SketchMatrix) -> Result<f64> {
    let errors = nearest_reference_errors(q, reference, sketch)?;
    let diameter = sketched_diameter(reference, sketch)?;
    if diameter <= 0.0 {
        return Err(Error::Degenerate("reference cloud has zero diameter".into()));
    }
    Ok(errors.mean / diameter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSummary {
    pub median: f64,
    pub per_image: Vec<f64>,
    /// Images whose background was constant and so carry no finite SNR.
    pub excluded: usize,
}

fn check_masks(images: &PointCloud, masks: &[Vec<bool>]) -> Result<()> {
    if masks.len() != images.len() {
        return Err(Error::InvalidCloud(format!(
            "{} masks for {} images",
            masks.len(),
            images.len()
        )));
    }
    for (i, m) in masks.iter().enumerate() {
        if m.len() != images.dim() {
            return Err(Error::DimensionMismatch { expected: images.dim(), got: m.len() });
        }
        if m.iter().filter(|&&b| b).count() < 2 {
            return Err(Error::InvalidCloud(format!(
                "mask {i} has fewer than 2 background pixels"
            )));
        }
    }
    Ok(())
}

fn summarize_snr(values: Vec<f64>) -> Result<SnrSummary> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let excluded = values.len() - finite.len();
    if excluded > 0 {
        warn!("{excluded} images with constant background excluded from the SNR median");
    }
    let median = stats::median(&finite)
        .ok_or_else(|| Error::Degenerate("no image has a finite SNR".into()))?;
    Ok(SnrSummary { median, per_image: values, excluded })
}

fn signal_to_noise(signal: f64, noise: &[f64]) -> f64 {
    match stats::sample_std(noise) {
        Some(sd) if sd > 0.0 => signal / sd,
        _ => f64::INFINITY,
    }
}

/// Median over images of μ/σ of the background pixels, σ the sample
/// standard deviation.
pub fn background_snr(images: &PointCloud, masks: &[Vec<bool>]) -> Result<SnrSummary> {
    check_masks(images, masks)?;
    let values = images
        .iter()
        .zip(masks)
        .map(|(img, mask)| {
            let bg: Vec<f64> = img.iter().zip(mask).filter(|(_, &b)| b).map(|(&v, _)| v).collect();
            signal_to_noise(stats::mean(&bg).unwrap_or(0.0), &bg)
        })
        .collect();
    summarize_snr(values)
}

/// Median over images of the mean foreground intensity divided by the sample
/// standard deviation of the background pixels.
pub fn contrast_snr(images: &PointCloud, masks: &[Vec<bool>]) -> Result<SnrSummary> {
    check_masks(images, masks)?;
    let mut values = Vec::with_capacity(images.len());
    for (i, (img, mask)) in images.iter().zip(masks).enumerate() {
        let (fg, bg): (Vec<(f64, bool)>, Vec<(f64, bool)>) =
            img.iter().copied().zip(mask.iter().copied()).partition(|&(_, b)| !b);
        if fg.is_empty() {
            return Err(Error::InvalidCloud(format!("mask {i} has no foreground pixels")));
        }
        let fg: Vec<f64> = fg.into_iter().map(|(v, _)| v).collect();
        let bg: Vec<f64> = bg.into_iter().map(|(v, _)| v).collect();
        values.push(signal_to_noise(stats::mean(&fg).unwrap_or(0.0), &bg));
    }
    summarize_snr(values)
}

/// Leading eigenvector of the covariance of `rows` (full coordinates), sign
/// fixed so that the first nonzero entry is positive. `None` if the rows all
/// coincide.
pub fn principal_direction(rows: &[&[f64]]) -> Option<Vec<f64>> {
    let n = rows.first()?.len();
    let k = rows.len() as f64;
    let mut centre = vec![0.0; n];
    for r in rows {
        for (c, v) in centre.iter_mut().zip(r.iter()) {
            *c += v / k;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for r in rows {
        let d = nalgebra::DVector::from_iterator(n, r.iter().zip(&centre).map(|(a, b)| a - b));
        cov.ger(1.0 / k, &d, &d, 1.0);
    }
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.iamax();
    if eig.eigenvalues[top] <= 0.0 {
        return None;
    }
    // among equal leading eigenvalues take the lexicographically largest
    // after sign normalisation
    let lead = eig.eigenvalues[top];
    let tol = 1e-12 * lead.abs().max(1.0);
    let mut best: Option<Vec<f64>> = None;
    for (j, &val) in eig.eigenvalues.iter().enumerate() {
        if (val - lead).abs() > tol {
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        if v.iter().find(|x| x.abs() > 1e-12).is_some_and(|&x| x < 0.0) {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        if best.as_ref().is_none_or(|b| lex_greater(&v, b)) {
            best = Some(v);
        }
    }
    best
}

fn lex_greater(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return x > y;
        }
    }
    false
}

/// Angle in degrees between two directions, ignoring orientation.
pub fn unsigned_angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = crate::cloud::norm(a);
    let nb = crate::cloud::norm(b);
    (dot.abs() / (na * nb)).clamp(0.0, 1.0).acos().to_degrees()
}

fn local_direction(
    i: usize,
    cloud: &PointCloud,
    projected: &[f64],
    m: usize,
    h: f64,
) -> Option<Vec<f64>> {
    let centre = &projected[i * m..(i + 1) * m];
    let h2 = h * h;
    let rows: Vec<&[f64]> = projected
        .chunks_exact(m)
        .enumerate()
        .filter(|&(_, p)| sq_dist(centre, p) < h2)
        .map(|(j, _)| cloud.point(j))
        .collect();
    // the point itself plus at least two neighbours
    if rows.len() < 3 {
        return None;
    }
    principal_direction(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaAngleError {
    pub median_deg: f64,
    pub per_point: Vec<f64>,
    /// Points lacking two neighbours within h, or with a degenerate
    /// neighbourhood, on either side.
    pub skipped: usize,
}

/// Median angle between the local-PCA first direction at each point of `x`
/// and the one at its nearest reference point, both taken over sketched
/// radius `h`.
pub fn local_pca_angle_error(
    x: &PointCloud,
    reference: &PointCloud,
    h: f64,
    sketch: &SketchMatrix,
) -> Result<PcaAngleError> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("PCA radius must be positive, got {h}")));
    }
    let m = sketch.sketch_dim();
    let xs = sketch.project_cloud(x)?;
    let rs = sketch.project_cloud(reference)?;
    let angles: Vec<Option<f64>> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let own = local_direction(i, x, &xs, m, h)?;
            let (r, _) = nearest_in(&xs[i * m..(i + 1) * m], &rs, m);
            let theirs = local_direction(r, reference, &rs, m, h)?;
            Some(unsigned_angle_deg(&own, &theirs))
        })
        .collect();
    let per_point: Vec<f64> = angles.iter().flatten().copied().collect();
    let skipped = angles.len() - per_point.len();
    if skipped > 0 {
        warn!("{skipped} of {} points skipped in local PCA", angles.len());
    }
    let median_deg = stats::median(&per_point)
        .ok_or_else(|| Error::Degenerate(format!("no point has two neighbours within {h}")))?;
    Ok(PcaAngleError { median_deg, per_point, skipped })
}

/// Metrics record of one experiment run, serialised as report.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rel_error_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rel_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fill_distance_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fill_distance_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub background_snr_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub background_snr_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pca_angle_deg: Option<f64>,
    pub runtime_ms: f64,
    pub iterations_run: usize,
    pub converged: bool,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            experiment: experiment.into(),
            ..Self::default()
        }
    }

    /// Every populated metric is finite and nonnegative.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("relative_error", self.relative_error),
            ("rmse_initial", self.rmse_initial),
            ("rmse", self.rmse),
            ("max_rel_error_initial", self.max_rel_error_initial),
            ("max_rel_error", self.max_rel_error),
            ("variance_initial", self.variance_initial),
            ("variance", self.variance),
            ("fill_distance_initial", self.fill_distance_initial),
            ("fill_distance_final", self.fill_distance_final),
            ("pca_angle_deg", self.pca_angle_deg),
        ];
        for (name, v) in fields {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Degenerate(format!("{name} = {v}")));
                }
            }
        }
        Ok(())
    }

    /// JSON with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self { runtime_ms: 0.0, ..self.clone() }
    }
}
