//! End-to-end runs: generate a dataset, reconstruct it and score the result.
//! Also holds the canned configurations of the benchmark suite.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cloud::{load_cloud, save_cloud, PointCloud};
use crate::config::{InitMode, SolverConfig};
use crate::datasets::{
    generate, masks_from_cloud, masks_to_cloud, Dataset, DatasetKind, DatasetSpec, Manifold,
};
use crate::error::{Error, Result};
use crate::metrics::{
    background_snr, contrast_snr, local_pca_angle_error, nearest_reference_errors,
    sketched_diameter, ExperimentReport,
};
use crate::neighborhood::fill_distance;
use crate::rng::{streams, Rng};
use crate::sketch::{build_sketch, SketchMatrix};
use crate::solver::{self, trace_to_csv, RunOutput, RunStatus};
use crate::stats;

/// Which metrics to compute after a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsToggles {
    pub reference_errors: bool,
    pub fill_distance: bool,
    /// Image SNR, only for datasets with masks.
    pub snr: bool,
    /// Local-PCA neighbourhood radius as a multiple of the fill distance of
    /// the scored set; `None` skips the PCA metric.
    pub pca_radius_mult: Option<f64>,
}

impl Default for MetricsToggles {
    fn default() -> Self {
        Self {
            reference_errors: true,
            fill_distance: true,
            snr: true,
            pca_radius_mult: None,
        }
    }
}

/// Local-PCA radius used by the benchmark, in units of the fill distance of
/// the set being scored.
pub const PCA_RADIUS_MULT: f64 = 3.0;
pub const PCA_BOOTSTRAPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub metrics: MetricsToggles,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_name() -> String {
    "run".into()
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, dataset: DatasetSpec, solver: SolverConfig) -> Self {
        Self {
            name: name.into(),
            dataset,
            solver,
            metrics: MetricsToggles::default(),
            output_dir: None,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.solver
            .validate(self.dataset.count, self.dataset.ambient_dim())?;
        if let Some(k) = self.metrics.pca_radius_mult {
            if !(k > 0.0) {
                return Err(Error::Config(format!("pca_radius_mult must be positive, got {k}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub dataset: Dataset,
    pub run: RunOutput,
}

impl ExperimentOutcome {
    /// Writes Q_initial.csv, Q_final.csv, trace.csv and report.json.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_cloud(&self.run.setup.initial, dir.join("Q_initial.csv"))?;
        save_cloud(&self.run.reconstruction, dir.join("Q_final.csv"))?;
        write_text(&dir.join("trace.csv"), &trace_to_csv(&self.run.trace))?;
        write_report(&self.report, &dir.join("report.json"))
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_report(report: &ExperimentReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serialises");
    write_text(path, &(json + "\n"))
}

/// Writes P.csv, clean.csv, reference.csv, spec.json and, for images,
/// masks.csv.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_cloud(&dataset.points, dir.join("P.csv"))?;
    save_cloud(&dataset.clean, dir.join("clean.csv"))?;
    save_cloud(&dataset.reference, dir.join("reference.csv"))?;
    if let Some(masks) = &dataset.masks {
        save_cloud(&masks_to_cloud(masks)?, dir.join("masks.csv"))?;
    }
    let spec = serde_json::to_string_pretty(&dataset.spec).expect("spec serialises");
    write_text(&dir.join("spec.json"), &(spec + "\n"))
}

/// Reads a directory written by [`write_dataset`]. The manifold is rebuilt
/// from spec.json.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let spec_path = dir.join("spec.json");
    let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let spec: DatasetSpec = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: spec_path.clone(),
        source,
    })?;
    let manifold = Manifold::for_spec(&spec)?;
    let masks_path = dir.join("masks.csv");
    let masks = if masks_path.exists() {
        Some(masks_from_cloud(&load_cloud(&masks_path)?)?)
    } else {
        None
    };
    let dataset = Dataset {
        points: load_cloud(dir.join("P.csv"))?,
        clean: load_cloud(dir.join("clean.csv"))?,
        reference: load_cloud(dir.join("reference.csv"))?,
        masks,
        manifold,
        spec,
    };
    let n = dataset.points.dim();
    for cloud in [&dataset.clean, &dataset.reference] {
        if cloud.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: cloud.dim() });
        }
    }
    Ok(dataset)
}

/// Re-scores saved point sets. The sketch is rebuilt from the input cloud
/// with the seed and dimension recorded in `config`.
pub fn rescore(
    config: &ExperimentConfig,
    dataset: &Dataset,
    q0: &PointCloud,
    q: &PointCloud,
) -> Result<ExperimentReport> {
    let master = Rng::new(config.solver.seed);
    let sketch = build_sketch(
        &dataset.points,
        config.solver.sketch_dim,
        &mut master.derive(streams::SKETCH),
    )?;
    let mut report = ExperimentReport::new(config.name.clone());
    report.config = serde_json::to_value(config).expect("config serialises");
    score_sets(&mut report, dataset, &sketch, q0, q, &config.metrics)?;
    report.validate()?;
    Ok(report)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let dataset = generate(&config.dataset)?;
    run_on(config, dataset)
}

/// Reconstructs an already generated dataset and scores it.
///
/// A sketch request above the rank of the data is retried once at the
/// achieved rank; the report echoes the dimension actually used.
pub fn run_on(config: &ExperimentConfig, dataset: Dataset) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    let mut config = config.clone();
    let run = match solver::run(&dataset.points, &config.solver) {
        Err(Error::DegenerateSketch { requested, rank }) if rank > 0 => {
            warn!("data has rank {rank}; sketch dimension lowered from {requested}");
            config.solver.sketch_dim = rank;
            solver::run(&dataset.points, &config.solver)?
        }
        other => other?,
    };
    let config = &config;
    let mut report = ExperimentReport::new(config.name.clone());
    report.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    report.iterations_run = run.iterations;
    report.converged = run.status == RunStatus::Converged;
    report.config = serde_json::to_value(config).expect("config serialises");
    score(&mut report, &dataset, &run, &config.metrics)?;
    report.validate()?;
    Ok(ExperimentOutcome { report, dataset, run })
}

/// Fills the metric fields of `report` for the run's initial and final sets.
pub fn score(
    report: &mut ExperimentReport,
    dataset: &Dataset,
    run: &RunOutput,
    toggles: &MetricsToggles,
) -> Result<()> {
    score_sets(
        report,
        dataset,
        &run.setup.sketch,
        &run.setup.initial,
        &run.reconstruction,
        toggles,
    )
}

/// Scores an initial and a final set against `dataset` under `sketch`.
pub fn score_sets(
    report: &mut ExperimentReport,
    dataset: &Dataset,
    sketch: &SketchMatrix,
    q0: &PointCloud,
    q: &PointCloud,
    toggles: &MetricsToggles,
) -> Result<()> {
    if toggles.reference_errors {
        let diameter = sketched_diameter(&dataset.reference, sketch)?;
        if diameter <= 0.0 {
            return Err(Error::Degenerate("reference cloud has zero diameter".into()));
        }
        let before = nearest_reference_errors(q0, &dataset.reference, sketch)?;
        let after = nearest_reference_errors(q, &dataset.reference, sketch)?;
        report.rmse_initial = Some(before.rmse);
        report.max_rel_error_initial = Some(before.max / diameter);
        report.variance_initial = Some(before.variance);
        report.rmse = Some(after.rmse);
        report.max_rel_error = Some(after.max / diameter);
        report.variance = Some(after.variance);
        report.relative_error = Some(after.mean / diameter);
    }
    if toggles.fill_distance && q.len() >= 2 {
        report.fill_distance_initial = Some(fill_distance(q0, sketch)?);
        report.fill_distance_final = Some(fill_distance(q, sketch)?);
    }
    if toggles.snr && dataset.masks.is_some() {
        // an image is scored against the background of the clean image it
        // sits closest to, since reconstruction points travel along the manifold
        let masks_for = |x: &PointCloud| -> Result<Vec<Vec<bool>>> {
            let near = nearest_reference_errors(x, &dataset.reference, sketch)?;
            Ok(near
                .nearest
                .iter()
                .map(|&r| dataset.reference.point(r).iter().map(|&v| v == 0.0).collect())
                .collect())
        };
        let (m0, m1) = (masks_for(q0)?, masks_for(q)?);
        report.snr_initial = Some(contrast_snr(q0, &m0)?.median);
        report.snr_final = Some(contrast_snr(q, &m1)?.median);
        report.background_snr_initial = background_snr(q0, &m0).ok().map(|s| s.median);
        report.background_snr_final = background_snr(q, &m1).ok().map(|s| s.median);
    }
    if let Some(k) = toggles.pca_radius_mult {
        let h = k * fill_distance(q, sketch)?;
        report.pca_angle_deg = Some(local_pca_angle_error(q, &dataset.reference, h, sketch)?.median_deg);
    }
    Ok(())
}

/// Names accepted by [`reproduce`].
pub const EXPERIMENTS: [&str; 7] = [
    "o2",
    "cone",
    "cylinder2d",
    "noise-sweep",
    "cylinder6d",
    "ellipses",
    "pca-benchmark",
];

pub const NOISE_SWEEP: [f64; 4] = [0.0, 0.1, 0.2, 0.5];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReproduceOptions {
    pub seed: u64,
    pub threads: Option<usize>,
    /// Overrides the iteration budget of every run.
    pub max_iters: Option<usize>,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        Self { seed: 1, threads: None, max_iters: None }
    }
}

fn solver_config(q_size: usize, max_iters: usize, opts: &ReproduceOptions) -> SolverConfig {
    SolverConfig {
        q_size,
        max_iters: opts.max_iters.unwrap_or(max_iters),
        seed: opts.seed,
        threads: opts.threads,
        ..SolverConfig::default()
    }
}

fn spec(kind: DatasetKind, count: usize, noise: f64, opts: &ReproduceOptions) -> DatasetSpec {
    DatasetSpec::new(kind, count, noise, opts.seed)
}

/// Full-scale configuration of the cylinder noise sweep at level `sigma`.
pub fn noise_sweep_config(sigma: f64, opts: &ReproduceOptions) -> ExperimentConfig {
    ExperimentConfig::new(
        format!("noise-sweep-{sigma}"),
        spec(DatasetKind::Cylinder2d, 816, sigma, opts),
        solver_config(163, 500, opts),
    )
}

/// Reference size multiplier for the six-dimensional cylinder.
pub const CYLINDER6D_REFERENCE_DENSITY: usize = 64;

/// The single-run configurations behind `name`; empty for the PCA
/// benchmark, which has its own driver.
pub fn canned_configs(name: &str, opts: &ReproduceOptions) -> Result<Vec<ExperimentConfig>> {
    let around = |index, radius| InitMode::AroundPoint { index, radius };
    Ok(match name {
        "o2" => {
            let mut solver = solver_config(50, 500, opts);
            solver.init = around(0, 2.0);
            vec![ExperimentConfig::new("o2", spec(DatasetKind::O2, 500, 0.2, opts), solver)]
        }
        "cone" => vec![ExperimentConfig::new(
            "cone",
            spec(DatasetKind::ConeSegment, 720, 0.2, opts),
            solver_config(144, 500, opts),
        )],
        "cylinder2d" => vec![ExperimentConfig::new(
            "cylinder2d",
            spec(DatasetKind::Cylinder2d, 816, 0.1, opts),
            solver_config(163, 500, opts),
        )],
        "noise-sweep" => NOISE_SWEEP.iter().map(|&s| noise_sweep_config(s, opts)).collect(),
        "cylinder6d" => {
            let mut dataset = spec(DatasetKind::Cylinder6d, 1200, 0.1, opts);
            // a 6-D grid needs many more nodes before its spacing drops below the noise
            dataset.reference_density = CYLINDER6D_REFERENCE_DENSITY;
            vec![ExperimentConfig::new("cylinder6d", dataset, solver_config(460, 300, opts))]
        }
        "ellipses" => vec![ExperimentConfig::new(
            "ellipses",
            spec(DatasetKind::EllipseImages, 900, 0.05, opts),
            solver_config(180, 1000, opts),
        )],
        "pca-benchmark" => Vec::new(),
        other => {
            return Err(Error::Config(format!(
                "unknown experiment `{other}`; expected one of {}",
                EXPERIMENTS.join(", ")
            )))
        }
    })
}

/// A plain table written as CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaRow {
    pub sigma: f64,
    /// `clean`, `noisy` or `denoised`.
    pub set: String,
    /// Median over bootstrap draws of the per-draw median angle.
    pub median_deg: f64,
    pub draws: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Reproduction {
    pub name: String,
    pub summary: Table,
    pub runs: Vec<ExperimentOutcome>,
    pub pca: Vec<PcaRow>,
}

impl Reproduction {
    /// Writes summary.csv and one sub-directory per run.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text(&dir.join("summary.csv"), &self.summary.to_csv())?;
        for run in &self.runs {
            run.write(&dir.join(&run.report.experiment))?;
        }
        Ok(())
    }
}

pub fn reproduce(name: &str, opts: &ReproduceOptions) -> Result<Reproduction> {
    if name == "pca-benchmark" {
        return pca_benchmark(opts);
    }
    let configs = canned_configs(name, opts)?;
    let mut summary = Table::new(&[
        "experiment",
        "samples",
        "q_size",
        "noise",
        "iterations",
        "relative_error",
        "rmse_initial",
        "rmse_final",
        "max_rel_error_initial",
        "max_rel_error_final",
        "variance_initial",
        "variance_final",
        "fill_distance_initial",
        "fill_distance_final",
        "snr_initial",
        "snr_final",
    ]);
    let mut runs = Vec::new();
    for cfg in &configs {
        let outcome = run_experiment(cfg)?;
        let r = &outcome.report;
        summary.push(vec![
            r.experiment.clone(),
            cfg.dataset.count.to_string(),
            cfg.solver.q_size.to_string(),
            format!("{:?}", cfg.dataset.noise),
            r.iterations_run.to_string(),
            cell(r.relative_error),
            cell(r.rmse_initial),
            cell(r.rmse),
            cell(r.max_rel_error_initial),
            cell(r.max_rel_error),
            cell(r.variance_initial),
            cell(r.variance),
            cell(r.fill_distance_initial),
            cell(r.fill_distance_final),
            cell(r.snr_initial),
            cell(r.snr_final),
        ]);
        runs.push(outcome);
    }
    Ok(Reproduction {
        name: name.into(),
        summary,
        runs,
        pca: Vec::new(),
    })
}

pub const PCA_SAMPLE_SIZE: usize = 160;

/// Local-PCA error of clean random samples, noisy samples and the MLOP
/// reconstruction of the cylinder at two noise levels.
pub fn pca_benchmark(opts: &ReproduceOptions) -> Result<Reproduction> {
    let mut summary = Table::new(&["sigma", "set", "pca_angle_deg", "bootstraps"]);
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for sigma in [0.1, 0.2] {
        let mut cfg = ExperimentConfig::new(
            format!("pca-{sigma}"),
            spec(DatasetKind::Cylinder2d, 816, sigma, opts),
            solver_config(PCA_SAMPLE_SIZE, 500, opts),
        );
        cfg.metrics.pca_radius_mult = Some(PCA_RADIUS_MULT);
        let outcome = run_experiment(&cfg)?;
        let sketch = &outcome.run.setup.sketch;
        let dataset = &outcome.dataset;
        let score_set = |x: &PointCloud| -> Result<f64> {
            let h = PCA_RADIUS_MULT * fill_distance(x, sketch)?;
            Ok(local_pca_angle_error(x, &dataset.reference, h, sketch)?.median_deg)
        };
        let master = Rng::new(opts.seed).derive(streams::BOOTSTRAP);
        let mut clean = Vec::new();
        let mut noisy = Vec::new();
        for b in 0..PCA_BOOTSTRAPS as u64 {
            let mut rng = master.derive_indexed("clean", b);
            clean.push(score_set(&dataset.manifold.sample_random(PCA_SAMPLE_SIZE, &mut rng)?)?);
            let mut rng = master.derive_indexed("noisy", b);
            let idx = rng.sample_indices(dataset.points.len(), PCA_SAMPLE_SIZE);
            noisy.push(score_set(&dataset.points.select(&idx)?)?);
        }
        let denoised = outcome
            .report
            .pca_angle_deg
            .ok_or_else(|| Error::Degenerate("PCA metric missing".into()))?;
        for (set, draws) in [("clean", clean), ("noisy", noisy), ("denoised", vec![denoised])] {
            let median_deg = stats::median(&draws).unwrap_or(f64::NAN);
            summary.push(vec![
                format!("{sigma:?}"),
                set.into(),
                format!("{median_deg:?}"),
                draws.len().to_string(),
            ]);
            rows.push(PcaRow { sigma, set: set.into(), median_deg, draws });
        }
        runs.push(outcome);
    }
    Ok(Reproduction {
        name: "pca-benchmark".into(),
        summary,
        runs,
        pca: rows,
    })
}
