//! Synthetic manifolds, noise injection and dense clean references.
//!
//! Every manifold is a map from a box of parameters into R^n. Samples are
//! laid out on a tensor grid in parameter space whose per-axis counts follow
//! the embedded length of each axis.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cloud::{euclidean, PointCloud};
use crate::error::{Error, Result};
use crate::rng::{streams, Rng};

pub const IMAGE_SIDE: usize = 20;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const ELLIPSE_RADII: (f64, f64) = (3.0, 8.0);
pub const DEFAULT_RADIUS: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    O2,
    ConeSegment,
    Cylinder2d,
    Cylinder6d,
    EllipseImages,
    GridLine,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 6] = [
        DatasetKind::O2,
        DatasetKind::ConeSegment,
        DatasetKind::Cylinder2d,
        DatasetKind::Cylinder6d,
        DatasetKind::EllipseImages,
        DatasetKind::GridLine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::O2 => "o2",
            DatasetKind::ConeSegment => "cone_segment",
            DatasetKind::Cylinder2d => "cylinder2d",
            DatasetKind::Cylinder6d => "cylinder6d",
            DatasetKind::EllipseImages => "ellipse_images",
            DatasetKind::GridLine => "grid_line",
        }
    }

    pub fn default_ambient_dim(self) -> usize {
        match self {
            DatasetKind::EllipseImages => IMAGE_PIXELS,
            _ => 60,
        }
    }

    fn min_ambient_dim(self) -> usize {
        match self {
            DatasetKind::O2 | DatasetKind::ConeSegment | DatasetKind::Cylinder2d => 4,
            DatasetKind::Cylinder6d => 7,
            DatasetKind::EllipseImages => IMAGE_PIXELS,
            DatasetKind::GridLine => 2,
        }
    }

    /// Ellipse images carry Gaussian pixel noise; every other kind uniform.
    pub fn gaussian_noise(self) -> bool {
        self == DatasetKind::EllipseImages
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown dataset kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Number J of samples.
    pub count: usize,
    /// Uniform half-width σ, or the pixel standard deviation for images.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub ambient_dim: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// The reference holds this many times as many points as P.
    #[serde(default = "default_reference_density")]
    pub reference_density: usize,
    /// Fixed radius R of the cylinders.
    #[serde(default)]
    pub radius: Option<f64>,
}

fn default_reference_density() -> usize {
    4
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, count: usize, noise: f64, seed: u64) -> Self {
        Self {
            kind,
            count,
            noise,
            ambient_dim: None,
            seed,
            reference_density: default_reference_density(),
            radius: None,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim.unwrap_or_else(|| self.kind.default_ambient_dim())
    }

    pub fn radius(&self) -> f64 {
        self.radius.unwrap_or(DEFAULT_RADIUS)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.count < 2 {
            return fail(format!("dataset needs at least 2 samples, got {}", self.count));
        }
        let n = self.ambient_dim();
        if self.kind == DatasetKind::EllipseImages && n != IMAGE_PIXELS {
            return fail(format!("ellipse images live in R^{IMAGE_PIXELS}, not R^{n}"));
        }
        if n < self.kind.min_ambient_dim() {
            return fail(format!(
                "{} needs ambient dimension >= {}, got {n}",
                self.kind.name(),
                self.kind.min_ambient_dim()
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        if self.reference_density == 0 {
            return fail("reference_density must be positive".into());
        }
        if !(self.radius() > 0.0 && self.radius().is_finite()) {
            return fail(format!("radius must be positive, got {}", self.radius()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    periodic: bool,
}

impl Axis {
    fn closed(lo: f64, hi: f64) -> Self {
        Self { lo, hi, periodic: false }
    }

    fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn nodes(&self, count: usize) -> Vec<f64> {
        let span = self.hi - self.lo;
        match count {
            0 => Vec::new(),
            1 => vec![self.mid()],
            c if self.periodic => (0..c).map(|k| self.lo + span * k as f64 / c as f64).collect(),
            c => (0..c)
                .map(|k| self.lo + span * k as f64 / (c - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum Shape {
    /// 2×2 rotation block [cos, −sin, sin, cos] mapped through an orthogonal A.
    O2 { rotation: DMatrix<f64> },
    ConeSegment,
    Cylinder2d { radius: f64 },
    Cylinder6d { radius: f64 },
    Ellipse,
    GridLine,
}

/// A parameterised manifold in R^n.
#[derive(Debug, Clone)]
pub struct Manifold {
    shape: Shape,
    axes: Vec<Axis>,
    ambient: usize,
}

impl Manifold {
    /// O(2) rotation matrices flattened into R^n and rotated by a random
    /// orthogonal matrix drawn from `rng`.
    pub fn o2(ambient: usize, rng: &mut Rng) -> Self {
        Self {
            shape: Shape::O2 { rotation: random_orthogonal(ambient, rng) },
            axes: vec![Axis { lo: -PI, hi: PI, periodic: true }],
            ambient,
        }
    }

    pub fn cone_segment(ambient: usize) -> Self {
        Self {
            shape: Shape::ConeSegment,
            axes: vec![
                Axis::closed(0.0, 2.0),
                Axis::closed(0.0, 2.5),
                Axis::closed(0.1 * PI, 1.5 * PI),
            ],
            ambient,
        }
    }

    pub fn cylinder2d(ambient: usize, radius: f64) -> Self {
        Self {
            shape: Shape::Cylinder2d { radius },
            axes: vec![Axis::closed(0.0, 2.0), Axis::closed(0.1 * PI, 1.5 * PI)],
            ambient,
        }
    }

    pub fn cylinder6d(ambient: usize, radius: f64) -> Self {
        let mut axes = vec![Axis::closed(0.0, 2.0)];
        axes.extend((0..5).map(|_| Axis::closed(0.1 * PI, 0.6 * PI)));
        Self {
            shape: Shape::Cylinder6d { radius },
            axes,
            ambient,
        }
    }

    pub fn ellipses() -> Self {
        let (lo, hi) = ELLIPSE_RADII;
        Self {
            shape: Shape::Ellipse,
            axes: vec![Axis::closed(lo, hi), Axis::closed(lo, hi)],
            ambient: IMAGE_PIXELS,
        }
    }

    /// Unit segment from e₁ along the normalised all-ones direction.
    pub fn grid_line(ambient: usize) -> Self {
        Self {
            shape: Shape::GridLine,
            axes: vec![Axis::closed(0.0, 1.0)],
            ambient,
        }
    }

    pub fn for_spec(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.ambient_dim();
        Ok(match spec.kind {
            DatasetKind::O2 => {
                let mut rng = Rng::new(spec.seed).derive(streams::DATASET);
                Self::o2(n, &mut rng)
            }
            DatasetKind::ConeSegment => Self::cone_segment(n),
            DatasetKind::Cylinder2d => Self::cylinder2d(n, spec.radius()),
            DatasetKind::Cylinder6d => Self::cylinder6d(n, spec.radius()),
            DatasetKind::EllipseImages => Self::ellipses(),
            DatasetKind::GridLine => Self::grid_line(n),
        })
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.axes.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    /// The orthogonal matrix applied to the O(2) samples.
    pub fn rotation(&self) -> Option<&DMatrix<f64>> {
        match &self.shape {
            Shape::O2 { rotation } => Some(rotation),
            _ => None,
        }
    }

    pub fn embed(&self, params: &[f64]) -> Vec<f64> {
        let n = self.ambient;
        let mut p = vec![0.0; n];
        match &self.shape {
            Shape::O2 { rotation } => {
                let (s, c) = params[0].sin_cos();
                let flat = [c, -s, s, c];
                for (row, out) in p.iter_mut().enumerate() {
                    *out = (0..4).map(|k| rotation[(row, k)] * flat[k]).sum();
                }
            }
            Shape::ConeSegment => {
                let (t, r, u) = (params[0], params[1], params[2]);
                let radial = (-r * r).exp() * FRAC_1_SQRT_2;
                let (s, c) = u.sin_cos();
                // v1 = [1,1,1,1,0..], v2 = [0,1,-1,0,..], v3 = [1,0,0,-1,..]
                p[0] = t + radial * s;
                p[1] = t + radial * c;
                p[2] = t - radial * c;
                p[3] = t - radial * s;
            }
            Shape::Cylinder2d { radius } => {
                let (t, u) = (params[0], params[1]);
                let scale = radius * FRAC_1_SQRT_2;
                let (s, c) = u.sin_cos();
                for v in p.iter_mut() {
                    *v = t;
                }
                p[0] += scale * s;
                p[1] += scale * c;
                p[2] -= scale * c;
                p[3] -= scale * s;
            }
            Shape::Cylinder6d { radius } => {
                let x = sphere_coords(*radius, &params[1..]);
                let scale = radius * radius;
                for (k, xk) in x.iter().enumerate() {
                    p[k] = params[0] + scale * xk;
                }
                p[6] = params[0];
            }
            Shape::Ellipse => return ellipse_image(params[0], params[1]).0,
            Shape::GridLine => {
                let step = params[0] / (n as f64).sqrt();
                for v in p.iter_mut() {
                    *v = step;
                }
                p[0] += 1.0;
            }
        }
        p
    }

    /// Approximate embedded length of each parameter axis, measured through
    /// the centre of the parameter box.
    pub fn axis_lengths(&self) -> Vec<f64> {
        const PIECES: usize = 64;
        let centre: Vec<f64> = self.axes.iter().map(Axis::mid).collect();
        self.axes
            .iter()
            .enumerate()
            .map(|(k, axis)| {
                let mut params = centre.clone();
                let mut prev: Option<Vec<f64>> = None;
                let mut length = 0.0;
                for step in 0..=PIECES {
                    params[k] = axis.lo + (axis.hi - axis.lo) * step as f64 / PIECES as f64;
                    let p = self.embed(&params);
                    if let Some(q) = &prev {
                        length += euclidean(q, &p);
                    }
                    prev = Some(p);
                }
                length
            })
            .collect()
    }

    /// Per-axis node counts whose product is at least `count`.
    pub fn grid_counts(&self, count: usize) -> Vec<usize> {
        let d = self.axes.len();
        if d == 1 {
            return vec![count];
        }
        let lengths: Vec<f64> = self
            .axis_lengths()
            .into_iter()
            .map(|l| l.max(1e-12))
            .collect();
        let volume: f64 = lengths.iter().product();
        let density = (count as f64 / volume).powf(1.0 / d as f64);
        let mut counts: Vec<usize> = lengths[..d - 1]
            .iter()
            .map(|l| ((l * density).round() as usize).max(1))
            .collect();
        let partial: usize = counts.iter().product();
        counts.push(count.div_ceil(partial).max(1));
        counts
    }

    /// Parameter tuples of `count` grid samples, first axis slowest, excess
    /// nodes dropped from the end.
    pub fn grid_params(&self, count: usize) -> Vec<Vec<f64>> {
        let counts = self.grid_counts(count);
        let nodes: Vec<Vec<f64>> = self
            .axes
            .iter()
            .zip(&counts)
            .map(|(axis, &c)| axis.nodes(c))
            .collect();
        let mut out = Vec::with_capacity(count);
        let mut index = vec![0usize; counts.len()];
        while out.len() < count {
            out.push(index.iter().enumerate().map(|(k, &i)| nodes[k][i]).collect());
            for k in (0..counts.len()).rev() {
                index[k] += 1;
                if index[k] < counts[k] {
                    break;
                }
                index[k] = 0;
            }
        }
        out
    }

    /// `count` clean grid samples, labelled with their parameters.
    pub fn sample(&self, count: usize) -> Result<PointCloud> {
        let params = self.grid_params(count);
        let mut data = Vec::with_capacity(count * self.ambient);
        for p in &params {
            data.extend(self.embed(p));
        }
        PointCloud::from_flat(self.ambient, data)?.with_labels(params)
    }

    /// `count` clean samples at parameters drawn uniformly from the box.
    pub fn sample_random(&self, count: usize, rng: &mut Rng) -> Result<PointCloud> {
        let params: Vec<Vec<f64>> = (0..count)
            .map(|_| self.axes.iter().map(|a| rng.uniform_range(a.lo, a.hi)).collect())
            .collect();
        let mut data = Vec::with_capacity(count * self.ambient);
        for p in &params {
            data.extend(self.embed(p));
        }
        PointCloud::from_flat(self.ambient, data)?.with_labels(params)
    }
}

/// Point on the 5-sphere of radius `radius` in R^6 from five angles.
pub fn sphere_coords(radius: f64, angles: &[f64]) -> [f64; 6] {
    let mut x = [0.0; 6];
    let mut prefix = radius;
    for (k, &u) in angles.iter().enumerate().take(5) {
        x[k] = prefix * u.cos();
        prefix *= u.sin();
    }
    x[5] = prefix;
    x
}

/// Binary centred 20×20 ellipse with horizontal radius `a` and vertical
/// radius `b`, flattened row-major, and its background mask.
pub fn ellipse_image(a: f64, b: f64) -> (Vec<f64>, Vec<bool>) {
    let c = (IMAGE_SIDE as f64 - 1.0) / 2.0;
    let mut image = Vec::with_capacity(IMAGE_PIXELS);
    let mut mask = Vec::with_capacity(IMAGE_PIXELS);
    for row in 0..IMAGE_SIDE {
        for col in 0..IMAGE_SIDE {
            let x = (col as f64 - c) / a;
            let y = (row as f64 - c) / b;
            let inside = x * x + y * y <= 1.0;
            image.push(if inside { 1.0 } else { 0.0 });
            mask.push(!inside);
        }
    }
    (image, mask)
}

fn random_orthogonal(n: usize, rng: &mut Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.normal());
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    // fix column signs so the draw is Haar distributed
    for k in 0..n {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

pub fn add_uniform_noise(cloud: &PointCloud, sigma: f64, rng: &mut Rng) -> Result<PointCloud> {
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    cloud.map_coords(|_, _, v| v + rng.uniform_range(-sigma, sigma))
}

pub fn add_gaussian_noise(cloud: &PointCloud, sigma: f64, rng: &mut Rng) -> Result<PointCloud> {
    if sigma == 0.0 {
        return Ok(cloud.clone());
    }
    cloud.map_coords(|_, _, v| v + sigma * rng.normal())
}

/// A generated dataset: noisy samples P, their clean positions, a denser
/// clean reference and, for images, the background masks.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub points: PointCloud,
    pub clean: PointCloud,
    pub reference: PointCloud,
    pub masks: Option<Vec<Vec<bool>>>,
    pub manifold: Manifold,
}

impl Dataset {
    /// Background masks as a 0/1 cloud, one row per image.
    pub fn masks_cloud(&self) -> Option<Result<PointCloud>> {
        self.masks.as_ref().map(|m| masks_to_cloud(m))
    }
}

pub fn masks_to_cloud(masks: &[Vec<bool>]) -> Result<PointCloud> {
    let rows: Vec<Vec<f64>> = masks
        .iter()
        .map(|m| m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
        .collect();
    PointCloud::from_rows(&rows)
}

pub fn masks_from_cloud(cloud: &PointCloud) -> Result<Vec<Vec<bool>>> {
    cloud
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| match v {
                    v if v == 1.0 => Ok(true),
                    v if v == 0.0 => Ok(false),
                    v => Err(Error::InvalidCloud(format!("mask entries must be 0 or 1, got {v}"))),
                })
                .collect()
        })
        .collect()
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    let manifold = Manifold::for_spec(spec)?;
    let clean = manifold.sample(spec.count)?;
    let reference = manifold.sample(spec.count * spec.reference_density)?;
    let mut noise_rng = Rng::new(spec.seed).derive(streams::NOISE);
    let points = if spec.kind.gaussian_noise() {
        add_gaussian_noise(&clean, spec.noise, &mut noise_rng)?
    } else {
        add_uniform_noise(&clean, spec.noise, &mut noise_rng)?
    };
    let masks = match spec.kind {
        DatasetKind::EllipseImages => Some(
            clean
                .labels()
                .unwrap_or_default()
                .iter()
                .map(|ab| ellipse_image(ab[0], ab[1]).1)
                .collect(),
        ),
        _ => None,
    };
    Ok(Dataset {
        spec: spec.clone(),
        points,
        clean,
        reference,
        masks,
        manifold,
    })
}

/// Appends zero coordinates so the cloud lives in R^`dim`.
pub fn pad_dims(cloud: &PointCloud, dim: usize) -> Result<PointCloud> {
    let from = cloud.dim();
    if dim < from {
        return Err(Error::DimensionMismatch { expected: from, got: dim });
    }
    let mut data = Vec::with_capacity(cloud.len() * dim);
    for p in cloud.iter() {
        data.extend_from_slice(p);
        data.extend(std::iter::repeat_n(0.0, dim - from));
    }
    let out = PointCloud::from_flat(dim, data)?;
    match cloud.labels() {
        Some(l) => out.with_labels(l.to_vec()),
        None => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighborhood::fill_distance;
    use crate::sketch::SketchMatrix;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn o2_identity_angle_and_norms() {
        let m = Manifold::o2(60, &mut Rng::new(3));
        let a = m.rotation().unwrap();
        let p = m.embed(&[0.0]);
        // A·[1,0,0,1,0..] is column 0 plus column 3
        let expect: Vec<f64> = (0..60).map(|r| a[(r, 0)] + a[(r, 3)]).collect();
        assert!(close(&p, &expect, 1e-12));
        let cloud = m.sample(50).unwrap();
        for q in cloud.iter() {
            assert!((crate::cloud::norm(q) - 2f64.sqrt()).abs() < 1e-12);
        }
        let ata = a.transpose() * a;
        assert!((ata - DMatrix::identity(60, 60)).amax() < 1e-12);
    }

    #[test]
    fn o2_grid_is_periodic_without_duplicates() {
        let m = Manifold::o2(8, &mut Rng::new(1));
        let cloud = m.sample(10).unwrap();
        let s = SketchMatrix::identity(8);
        let h = fill_distance(&cloud, &s).unwrap();
        // ten equally spaced angles: chord 2·√2·sin(π/10)
        assert!((h - 2.0 * 2f64.sqrt() * (PI / 10.0).sin()).abs() < 1e-12);
    }

    #[test]
    fn cone_formula_points() {
        let m = Manifold::cone_segment(60);
        let p = m.embed(&[0.0, 0.0, PI / 2.0]);
        let mut expect = vec![0.0; 60];
        expect[0] = FRAC_1_SQRT_2;
        expect[3] = -FRAC_1_SQRT_2;
        assert!(close(&p, &expect, 1e-15));
        let far = m.embed(&[1.0, 2.5, 0.3]);
        let radial = (-6.25f64).exp() * FRAC_1_SQRT_2;
        assert!((radial - 1.37e-3).abs() < 1e-5);
        for k in 0..4 {
            assert!((far[k] - 1.0).abs() <= radial);
        }
    }

    #[test]
    fn cylinder2d_formula_points() {
        let m = Manifold::cylinder2d(60, 1.0);
        let p = m.embed(&[0.0, PI / 2.0]);
        let mut expect = vec![0.0; 60];
        expect[0] = FRAC_1_SQRT_2;
        expect[3] = -FRAC_1_SQRT_2;
        assert!(close(&p, &expect, 1e-15));
        let a = m.embed(&[0.3, 1.0]);
        let b = m.embed(&[0.3 + 0.01, 1.0]);
        assert!((euclidean(&a, &b) - 0.01 * 60f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cylinder6d_sphere_constraint() {
        let m = Manifold::cylinder6d(60, 1.5);
        let cloud = m.sample(300).unwrap();
        for params in cloud.labels().unwrap() {
            let x = sphere_coords(1.5, &params[1..]);
            let r2: f64 = x.iter().map(|v| v * v).sum();
            assert!((r2 - 2.25).abs() < 1e-12);
        }
        let x = sphere_coords(1.5, &[PI / 2.0, 0.3, 0.4, 0.5, 0.6]);
        assert!(x[0].abs() < 1e-15);
        // t·v0 lands on the first seven coordinates
        let p = m.embed(&[1.0, PI / 2.0, PI / 2.0, PI / 2.0, PI / 2.0, PI / 2.0]);
        assert!((p[5] - (1.0 + 2.25 * 1.5)).abs() < 1e-12);
        assert_eq!(p[6], 1.0);
        assert!(p[7..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ellipse_images_are_binary_with_background() {
        let (img, mask) = ellipse_image(8.0, 8.0);
        assert!(img.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(mask.iter().filter(|&&b| b).count() >= 2);
        let (img, _) = ellipse_image(3.0, 3.0);
        // the four pixels around the centre are inside
        assert_eq!(img[9 * 20 + 9], 1.0);
        assert_eq!(img[10 * 20 + 10], 1.0);
        assert_eq!(img[0], 0.0);
        let tall = ellipse_image(3.0, 8.0).0;
        let row_sum = |im: &[f64], r: usize| im[r * 20..(r + 1) * 20].iter().sum::<f64>();
        assert!(row_sum(&tall, 9) < 10.0);
        assert_eq!(row_sum(&tall, 2), 1.0 + 1.0);
    }

    #[test]
    fn grid_line_spacing_and_collinearity() {
        let m = Manifold::grid_line(8);
        let cloud = m.sample(11).unwrap();
        let h = fill_distance(&cloud, &SketchMatrix::identity(8)).unwrap();
        assert!((h - 0.1).abs() < 1e-12);
        let first = cloud.point(0).to_vec();
        let dir: Vec<f64> = cloud.point(10).iter().zip(&first).map(|(a, b)| a - b).collect();
        for q in cloud.iter() {
            let v: Vec<f64> = q.iter().zip(&first).map(|(a, b)| a - b).collect();
            let t = v.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>();
            let resid: f64 = v.iter().zip(&dir).map(|(a, b)| (a - t * b).powi(2)).sum();
            assert!(resid < 1e-24);
        }
    }

    #[test]
    fn grid_counts_hit_the_target() {
        for (m, j) in [
            (Manifold::cylinder2d(60, 1.5), 816),
            (Manifold::cone_segment(60), 720),
            (Manifold::cylinder6d(60, 1.5), 1200),
            (Manifold::ellipses(), 900),
        ] {
            let counts = m.grid_counts(j);
            assert!(counts.iter().product::<usize>() >= j);
            assert_eq!(m.sample(j).unwrap().len(), j);
        }
        assert_eq!(Manifold::ellipses().grid_counts(900), vec![30, 30]);
    }

    #[test]
    fn uniform_noise_bounds_and_mean() {
        let clean = Manifold::cylinder2d(60, 1.5).sample(200).unwrap();
        let same = add_uniform_noise(&clean, 0.0, &mut Rng::new(1)).unwrap();
        assert_eq!(same, clean);
        let noisy = add_uniform_noise(&clean, 0.2, &mut Rng::new(1)).unwrap();
        let diffs: Vec<f64> = noisy
            .as_flat()
            .iter()
            .zip(clean.as_flat())
            .map(|(a, b)| a - b)
            .collect();
        assert!(diffs.iter().all(|d| d.abs() <= 0.2));
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        assert!(mean.abs() < 0.02);
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in DatasetKind::ALL {
            let spec = DatasetSpec::new(kind, 40, 0.1, 9);
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a.points, b.points);
            assert_eq!(a.reference, b.reference);
            assert_eq!(a.reference.len(), 160);
            assert_eq!(a.masks.is_some(), kind == DatasetKind::EllipseImages);
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = DatasetSpec::new(DatasetKind::Cylinder2d, 1, 0.1, 0);
        assert!(generate(&spec).is_err());
        spec.count = 10;
        spec.ambient_dim = Some(3);
        assert!(generate(&spec).is_err());
        let img = DatasetSpec {
            ambient_dim: Some(60),
            ..DatasetSpec::new(DatasetKind::EllipseImages, 10, 0.05, 0)
        };
        assert!(generate(&img).is_err());
        assert_eq!("cone-segment".parse::<DatasetKind>().unwrap(), DatasetKind::ConeSegment);
        assert!("torus".parse::<DatasetKind>().is_err());
        let json = serde_json::to_string(&DatasetSpec::new(DatasetKind::O2, 5, 0.0, 1)).unwrap();
        assert!(json.contains("\"kind\":\"o2\""));
    }

    #[test]
    fn masks_round_trip() {
        let masks = vec![vec![true, false, true], vec![false, false, true]];
        let cloud = masks_to_cloud(&masks).unwrap();
        assert_eq!(masks_from_cloud(&cloud).unwrap(), masks);
    }

    #[test]
    fn padding_keeps_distances() {
        let c = Manifold::cylinder2d(60, 1.5).sample(30).unwrap();
        let p = pad_dims(&c, 120).unwrap();
        assert_eq!(p.dim(), 120);
        assert_eq!(euclidean(c.point(3), c.point(17)), euclidean(p.point(3), p.point(17)));
    }

    /// Ball counts at radius k·h stay within a bounded multiple of k^d.
    #[test]
    fn grid_samples_are_density_bounded() {
        let c = Manifold::cylinder2d(60, 1.5).sample(400).unwrap();
        let s = SketchMatrix::identity(60);
        let h = fill_distance(&c, &s).unwrap();
        let mut worst: f64 = 0.0;
        for k in [1.0, 2.0, 4.0] {
            for q in c.iter() {
                let n = crate::neighborhood::count_within(q, &c, k * h, &s).unwrap();
                worst = worst.max(n as f64 / (k * k));
            }
        }
        assert!(worst.is_finite() && worst < 20.0, "ratio {worst}");
    }

    proptest! {
        #[test]
        fn uniform_noise_stays_in_band(seed in 0u64..1000, sigma in 0.0f64..2.0) {
            let clean = Manifold::grid_line(5).sample(20).unwrap();
            let noisy = add_uniform_noise(&clean, sigma, &mut Rng::new(seed)).unwrap();
            for (a, b) in noisy.as_flat().iter().zip(clean.as_flat()) {
                prop_assert!((a - b).abs() <= sigma);
            }
        }
    }
}
