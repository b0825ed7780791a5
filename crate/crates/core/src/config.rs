use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighborhood::SupportParams;

/// How the initial reconstruction Q⁰ is drawn from P.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum InitMode {
    /// Uniform subsample of P without replacement.
    #[default]
    Random,
    /// Uniform subsample of the points of P within sketched distance `radius`
    /// of `P[index]`.
    AroundPoint { index: usize, radius: f64 },
}

/// How the Gaussian attraction weight enters the attraction coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttractionWeights {
    /// α = w/‖q−p‖_H. The weight is held at its value for the current
    /// iterate, as in a fixed-point step of the weighted L1 median.
    #[default]
    Frozen,
    /// α = w/‖q−p‖_H · (1 − 2‖q−p‖_H²/h₁²), the full derivative of
    /// ‖q−p‖_H · w. Far samples then push q away.
    Differentiated,
}

/// Tunables of the reconstruction. Fields left `None` are derived from the
/// attraction support h₁ once it is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Size I of the reconstruction.
    pub q_size: usize,
    /// Smoothing ε of ‖v‖_H = √(‖v‖² + ε).
    pub eps_h: f64,
    pub attraction_weights: AttractionWeights,
    /// Stop when every sketched gradient norm is below this (default 1e-4·h₁).
    pub stop_tol: Option<f64>,
    pub max_iters: usize,
    pub sketch_dim: usize,
    /// First step, before a Barzilai–Borwein step is available (default 0.1·h₁).
    pub initial_step: Option<f64>,
    /// Bounds applied to every BB step (default [1e-4·h₁, h₁]).
    pub step_clamp: Option<[f64; 2]>,
    /// Longest move of a single point in one iteration, in full coordinates
    /// (default h₁).
    pub max_move: Option<f64>,
    /// Pairs farther apart than this multiple of the support are skipped.
    pub neighbor_cutoff_mult: f64,
    pub seed: u64,
    pub init: InitMode,
    /// Worker threads for the per-point phase; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            q_size: 100,
            eps_h: 0.1,
            attraction_weights: AttractionWeights::Frozen,
            stop_tol: None,
            max_iters: 500,
            sketch_dim: 10,
            initial_step: None,
            step_clamp: None,
            max_move: None,
            neighbor_cutoff_mult: 2.0 * std::f64::consts::SQRT_2,
            seed: 0,
            init: InitMode::Random,
            threads: None,
        }
    }
}

/// Step and stopping parameters after defaults have been filled in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    pub stop_tol: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_move: f64,
}

impl SolverConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Checks the configuration against an input of `input_size` points in
    /// R^`ambient_dim`.
    pub fn validate(&self, input_size: usize, ambient_dim: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.q_size == 0 {
            return fail("q_size must be positive".into());
        }
        if self.q_size > input_size {
            return fail(format!(
                "q_size {} exceeds the input size {input_size}; upsampling is not supported",
                self.q_size
            ));
        }
        if !(self.eps_h > 0.0 && self.eps_h.is_finite()) {
            return fail(format!("eps_h must be positive, got {}", self.eps_h));
        }
        if self.sketch_dim == 0 || self.sketch_dim > ambient_dim {
            return fail(format!(
                "sketch_dim {} must lie in 1..={ambient_dim}",
                self.sketch_dim
            ));
        }
        if !(self.neighbor_cutoff_mult > 0.0) {
            return fail("neighbor_cutoff_mult must be positive".into());
        }
        if let Some(tol) = self.stop_tol {
            if !(tol > 0.0) {
                return fail(format!("stop_tol must be positive, got {tol}"));
            }
        }
        if let Some(t) = self.threads {
            if t == 0 {
                return fail("threads must be positive".into());
            }
        }
        if let InitMode::AroundPoint { index, radius } = self.init {
            if index >= input_size || !(radius > 0.0) {
                return fail(format!(
                    "around_point init needs index < {input_size} and a positive radius"
                ));
            }
        }
        if let Some(step) = self.initial_step {
            if !(step > 0.0) {
                return fail("initial_step must be positive".into());
            }
        }
        if let Some([lo, hi]) = self.step_clamp {
            if !(lo > 0.0 && lo <= hi) {
                return fail(format!("step_clamp [{lo}, {hi}] must satisfy 0 < min <= max"));
            }
        }
        Ok(())
    }

    /// Fills in the h₁-relative defaults.
    pub fn step_rule(&self, supports: &SupportParams) -> Result<StepRule> {
        let h1 = supports.h1;
        let [min_step, max_step] = self.step_clamp.unwrap_or([1e-4 * h1, h1]);
        let rule = StepRule {
            stop_tol: self.stop_tol.unwrap_or(1e-4 * h1),
            initial_step: self.initial_step.unwrap_or(0.1 * h1),
            min_step,
            max_step,
            max_move: self.max_move.unwrap_or(h1),
        };
        if !(0.0 < rule.min_step
            && rule.min_step <= rule.initial_step
            && rule.initial_step <= rule.max_step
            && rule.max_move > 0.0)
        {
            return Err(Error::Config(format!(
                "steps must satisfy 0 < min ({}) <= initial ({}) <= max ({}) and max_move ({}) > 0",
                rule.min_step, rule.initial_step, rule.max_step, rule.max_move
            )));
        }
        Ok(rule)
    }
}
