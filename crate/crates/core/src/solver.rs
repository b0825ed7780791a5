//! Attraction–repulsion gradient descent producing the reconstruction Q.
//!
//! Each reconstruction point q_{i'} owns the energy
//!
//! ```text
//! G_{i'}(q) = Σ_j ‖q − p_j‖_H · w_j  −  λ_{i'} Σ_{i≠i'} η(‖q − q_i‖) · ŵ(‖q − q_i‖)
//! ```
//!
//! with ŵ(r) = exp(−r²/h₂²), η(r) = 1/(3r³), ‖v‖_H = √(‖v‖² + ε) and all
//! norms taken through the sketch. The attraction weight w_j is
//! exp(−‖q − p_j‖²/h₁²); under [`AttractionWeights::Frozen`] it is evaluated
//! at the current iterate q_{i'}^(k) and held fixed, under
//! [`AttractionWeights::Differentiated`] it moves with q. The total cost is
//! Σ_{i'} G_{i'}(q_{i'}). The descent direction of point i' is
//!
//! ```text
//! ∇G_{i'} = Σ_j (q_{i'} − p_j) α_j  +  λ_{i'} Σ_{i≠i'} (q_{i'} − q_i) β_i
//! ```
//!
//! which is the exact derivative of G_{i'} in its own point when the sketch
//! is the identity. The balancing factors λ are fixed at the first
//! iteration to −‖attraction‖/‖repulsion‖ and are therefore non-positive;
//! with that sign the second term pushes points apart.
//!
//! The differentiated weights give a pair energy that vanishes far from the
//! data, so on manifolds of dimension two and up the points drift off the
//! samples; the frozen form is the default.
//!
//! All per-point gradients of an iteration are computed from the same
//! snapshot Q^(k) and committed together, so the update order does not
//! matter and the per-point phase may run on any number of threads.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::config::{AttractionWeights, InitMode, SolverConfig, StepRule};
use crate::error::{Error, Result};
use crate::neighborhood::{estimate_supports, fill_distance, SupportParams};
use crate::rng::{streams, Rng};
use crate::sketch::{build_sketch, sq_dist, SketchMatrix};

/// Coincidence guard, relative to h₂.
pub const COINCIDENCE_REL: f64 = 1e-9;

/// Absolute floor for the bare η formulas.
const ETA_FLOOR: f64 = 1e-12;

/// √(‖Sᵀv‖² + ε).
pub fn h_eps_norm(v: &[f64], eps: f64, sketch: &SketchMatrix) -> Result<f64> {
    let n = sketch.norm(v)?;
    Ok((n * n + eps).sqrt())
}

/// η(r) = 1/(3r³).
pub fn eta(r: f64) -> Result<f64> {
    if !(r > ETA_FLOOR) {
        return Err(Error::CoincidentDistance(r));
    }
    Ok(1.0 / (3.0 * r * r * r))
}

/// |η′(r)| = 1/r⁴.
pub fn eta_abs_deriv(r: f64) -> Result<f64> {
    if !(r > ETA_FLOOR) {
        return Err(Error::CoincidentDistance(r));
    }
    let r2 = r * r;
    Ok(1.0 / (r2 * r2))
}

/// Radial profiles of the attraction and repulsion terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub eps: f64,
    pub h1: f64,
    pub h2: f64,
    pub cutoff_mult: f64,
    pub weights: AttractionWeights,
}

impl Kernel {
    pub fn new(supports: &SupportParams, eps: f64, cutoff_mult: f64, weights: AttractionWeights) -> Self {
        Self {
            eps,
            h1: supports.h1,
            h2: supports.h2,
            cutoff_mult,
            weights,
        }
    }

    pub fn coincidence_guard(&self) -> f64 {
        COINCIDENCE_REL * self.h2
    }

    fn attraction_cutoff_sq(&self) -> f64 {
        let c = self.cutoff_mult * self.h1;
        c * c
    }

    fn repulsion_cutoff(&self) -> f64 {
        self.cutoff_mult * self.h2
    }

    /// α as a function of the squared sketched distance.
    #[inline]
    pub fn alpha_sq(&self, d2: f64) -> f64 {
        if d2 > self.attraction_cutoff_sq() {
            return 0.0;
        }
        let h1_sq = self.h1 * self.h1;
        let w = (-d2 / h1_sq).exp();
        let hn_sq = d2 + self.eps;
        match self.weights {
            AttractionWeights::Frozen => w / hn_sq.sqrt(),
            AttractionWeights::Differentiated => w / hn_sq.sqrt() * (1.0 - 2.0 * hn_sq / h1_sq),
        }
    }

    /// Attraction energy of one pair: ‖x − p‖_H times the weight. `d2` is
    /// the squared distance from x, `anchor_d2` the one from the current
    /// iterate, where frozen weights are evaluated.
    #[inline]
    pub fn attraction_energy_sq(&self, d2: f64, anchor_d2: f64) -> f64 {
        let wd2 = match self.weights {
            AttractionWeights::Frozen => anchor_d2,
            AttractionWeights::Differentiated => d2,
        };
        if wd2 > self.attraction_cutoff_sq() {
            return 0.0;
        }
        (d2 + self.eps).sqrt() * (-wd2 / (self.h1 * self.h1)).exp()
    }

    /// β as a function of the sketched distance.
    #[inline]
    pub fn beta(&self, d: f64) -> Result<f64> {
        if !(d > self.coincidence_guard()) {
            return Err(Error::CoincidentDistance(d));
        }
        if d > self.repulsion_cutoff() {
            return Ok(0.0);
        }
        let h2_sq = self.h2 * self.h2;
        let w = (-d * d / h2_sq).exp();
        Ok(w / d * (eta_abs_deriv(d)? + 2.0 * eta(d)? / h2_sq * d))
    }

    /// η · ŵ, the repulsion energy of one pair.
    #[inline]
    pub fn repulsion_energy(&self, d: f64) -> Result<f64> {
        if !(d > self.coincidence_guard()) {
            return Err(Error::CoincidentDistance(d));
        }
        if d > self.repulsion_cutoff() {
            return Ok(0.0);
        }
        Ok(eta(d)? * (-d * d / (self.h2 * self.h2)).exp())
    }
}

/// α for the pair (q, p).
pub fn attraction_coeff(q: &[f64], p: &[f64], kernel: &Kernel, sketch: &SketchMatrix) -> Result<f64> {
    let d = sketch.dist(q, p)?;
    Ok(kernel.alpha_sq(d * d))
}

/// β for the pair (q, q′).
pub fn repulsion_coeff(q: &[f64], other: &[f64], kernel: &Kernel, sketch: &SketchMatrix) -> Result<f64> {
    kernel.beta(sketch.dist(q, other)?)
}

/// Barzilai–Borwein step ⟨Δq, ΔG⟩ / ⟨ΔG, ΔG⟩, clamped to the rule's bounds.
/// Falls back to the initial step when the quotient is undefined or not
/// positive.
pub fn bb_step(delta_q: &[f64], delta_g: &[f64], rule: &StepRule) -> f64 {
    let num: f64 = delta_q.iter().zip(delta_g).map(|(a, b)| a * b).sum();
    let den: f64 = delta_g.iter().map(|g| g * g).sum();
    let raw = num / den;
    if den == 0.0 || !(raw > 0.0) || !raw.is_finite() {
        return rule.initial_step;
    }
    raw.clamp(rule.min_step, rule.max_step)
}

/// Reconstruction points in full and sketched coordinates.
#[derive(Debug, Clone)]
struct Snapshot {
    coords: Vec<f64>,
    sketched: Vec<f64>,
}

/// Attraction and repulsion sums of one point, before λ is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTerms {
    pub attraction: Vec<f64>,
    pub repulsion: Vec<f64>,
}

/// The fixed data of a reconstruction: input cloud, sketch and kernel.
#[derive(Debug, Clone)]
pub struct Problem {
    points: PointCloud,
    points_sketched: Vec<f64>,
    sketch: SketchMatrix,
    kernel: Kernel,
}

impl Problem {
    pub fn new(points: PointCloud, sketch: SketchMatrix, kernel: Kernel) -> Result<Self> {
        let points_sketched = sketch.project_cloud(&points)?;
        for (name, v) in [("eps", kernel.eps), ("h1", kernel.h1), ("h2", kernel.h2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            points,
            points_sketched,
            sketch,
            kernel,
        })
    }

    pub fn points(&self) -> &PointCloud {
        &self.points
    }

    pub fn sketch(&self) -> &SketchMatrix {
        &self.sketch
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    fn snapshot(&self, q: &PointCloud) -> Result<Snapshot> {
        Ok(Snapshot {
            coords: q.as_flat().to_vec(),
            sketched: self.sketch.project_cloud(q)?,
        })
    }

    fn snapshot_flat(&self, coords: Vec<f64>) -> Snapshot {
        let (n, m) = (self.points.dim(), self.sketch.sketch_dim());
        let mut sketched = vec![0.0; coords.len() / n * m];
        for (out, q) in sketched.chunks_exact_mut(m).zip(coords.chunks_exact(n)) {
            self.sketch.project_into(q, out);
        }
        Snapshot { coords, sketched }
    }

    fn terms_in(&self, snap: &Snapshot, i: usize) -> Result<GradientTerms> {
        let (n, m) = (self.points.dim(), self.sketch.sketch_dim());
        let q = &snap.coords[i * n..(i + 1) * n];
        let qs = &snap.sketched[i * m..(i + 1) * m];

        let mut attraction = vec![0.0; n];
        for (p, ps) in self.points.iter().zip(self.points_sketched.chunks_exact(m)) {
            let alpha = self.kernel.alpha_sq(sq_dist(qs, ps));
            if alpha != 0.0 {
                for ((acc, a), b) in attraction.iter_mut().zip(q).zip(p) {
                    *acc += (a - b) * alpha;
                }
            }
        }

        let mut repulsion = vec![0.0; n];
        let others = snap.coords.chunks_exact(n).zip(snap.sketched.chunks_exact(m));
        for (k, (other, os)) in others.enumerate() {
            if k == i {
                continue;
            }
            let d = sq_dist(qs, os).sqrt();
            let beta = self.kernel.beta(d).map_err(|_| Error::CoincidentPoints {
                a: i,
                b: k,
                distance: d,
            })?;
            if beta != 0.0 {
                for ((acc, a), b) in repulsion.iter_mut().zip(q).zip(other) {
                    *acc += (a - b) * beta;
                }
            }
        }
        Ok(GradientTerms {
            attraction,
            repulsion,
        })
    }

    fn energy_in(&self, snap: &Snapshot, lambda: f64, i: usize, x: &[f64]) -> Result<f64> {
        let (n, m) = (self.points.dim(), self.sketch.sketch_dim());
        let mut xs = vec![0.0; m];
        self.sketch.project_into(x, &mut xs);
        let anchor = &snap.sketched[i * m..(i + 1) * m];
        let attraction: f64 = self
            .points_sketched
            .chunks_exact(m)
            .map(|ps| self.kernel.attraction_energy_sq(sq_dist(&xs, ps), sq_dist(anchor, ps)))
            .sum();
        if lambda == 0.0 {
            return Ok(attraction);
        }
        let mut repulsion = 0.0;
        for (k, os) in snap.sketched.chunks_exact(m).enumerate() {
            if k == i {
                continue;
            }
            let d = sq_dist(&xs, os).sqrt();
            repulsion += self
                .kernel
                .repulsion_energy(d)
                .map_err(|_| Error::CoincidentPoints { a: i, b: k, distance: d })?;
        }
        debug_assert_eq!(x.len(), n);
        Ok(attraction - lambda * repulsion)
    }

    fn check_reconstruction(&self, q: &PointCloud, lambda: &[f64]) -> Result<()> {
        if q.dim() != self.points.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.points.dim(),
                got: q.dim(),
            });
        }
        if lambda.len() != q.len() {
            return Err(Error::InvalidCloud(format!(
                "{} balancing factors for {} points",
                lambda.len(),
                q.len()
            )));
        }
        Ok(())
    }

    /// Attraction and repulsion sums of point `i` of `q`.
    pub fn terms(&self, q: &PointCloud, i: usize) -> Result<GradientTerms> {
        self.terms_in(&self.snapshot(q)?, i)
    }

    /// Descent direction of point `i` of `q` given balancing factors `lambda`.
    pub fn gradient_at(&self, q: &PointCloud, lambda: &[f64], i: usize) -> Result<Vec<f64>> {
        self.check_reconstruction(q, lambda)?;
        let t = self.terms(q, i)?;
        Ok(combine(&t, lambda[i]))
    }

    /// Energy owned by point `i` when it is moved to `x`, all other points
    /// of `q` held fixed. Its gradient in `x` at `x = q_i` is
    /// [`Problem::gradient_at`] (exactly so for the identity sketch).
    pub fn point_energy(&self, q: &PointCloud, lambda: &[f64], i: usize, x: &[f64]) -> Result<f64> {
        self.check_reconstruction(q, lambda)?;
        if x.len() != q.dim() {
            return Err(Error::DimensionMismatch {
                expected: q.dim(),
                got: x.len(),
            });
        }
        self.energy_in(&self.snapshot(q)?, lambda[i], i, x)
    }

    /// Total cost Σ_i G_i(q_i). With all λ = 0 this is the attraction
    /// energy alone.
    pub fn cost(&self, q: &PointCloud, lambda: &[f64]) -> Result<f64> {
        self.check_reconstruction(q, lambda)?;
        let snap = self.snapshot(q)?;
        self.cost_in(&snap, lambda)
    }

    fn cost_in(&self, snap: &Snapshot, lambda: &[f64]) -> Result<f64> {
        let n = self.points.dim();
        snap.coords
            .chunks_exact(n)
            .enumerate()
            .map(|(i, x)| self.energy_in(snap, lambda[i], i, x))
            .sum()
    }

    /// Balancing factors λ_i = −‖A_i‖/‖R_i‖ (sketched norms) from the
    /// attraction and repulsion sums at `q`.
    pub fn init_lambda(&self, q: &PointCloud) -> Result<Vec<f64>> {
        let snap = self.snapshot(q)?;
        let terms = (0..q.len())
            .map(|i| self.terms_in(&snap, i))
            .collect::<Result<Vec<_>>>()?;
        terms.iter().map(|t| self.lambda_from_terms(t)).collect()
    }

    fn lambda_from_terms(&self, t: &GradientTerms) -> Result<f64> {
        let a = self.sketch.norm(&t.attraction)?;
        let r = self.sketch.norm(&t.repulsion)?;
        Ok(balance(a, r))
    }
}

/// −a/r, or 0 when either norm vanishes.
pub fn balance(attraction_norm: f64, repulsion_norm: f64) -> f64 {
    if repulsion_norm == 0.0 {
        if attraction_norm != 0.0 {
            log::warn!("isolated reconstruction point: no repulsion partners, lambda set to 0");
        }
        return 0.0;
    }
    if attraction_norm == 0.0 {
        return 0.0;
    }
    -attraction_norm / repulsion_norm
}

fn combine(t: &GradientTerms, lambda: f64) -> Vec<f64> {
    t.attraction
        .iter()
        .zip(&t.repulsion)
        .map(|(a, r)| a + lambda * r)
        .collect()
}

/// Iteration state.
#[derive(Debug, Clone)]
pub struct SolverState {
    dim: usize,
    q_curr: Vec<f64>,
    q_prev: Option<Vec<f64>>,
    grad_curr: Option<Vec<f64>>,
    grad_prev: Option<Vec<f64>>,
    lambda: Option<Vec<f64>>,
    step: Vec<f64>,
    iter: usize,
    grad_norms: Vec<f64>,
}

impl SolverState {
    pub fn iter(&self) -> usize {
        self.iter
    }

    pub fn lambda(&self) -> Option<&[f64]> {
        self.lambda.as_deref()
    }

    pub fn steps(&self) -> &[f64] {
        &self.step
    }

    pub fn grad_norms(&self) -> &[f64] {
        &self.grad_norms
    }

    /// Gradient at the current iterate, once evaluated.
    pub fn gradient(&self) -> Option<&[f64]> {
        self.grad_curr.as_deref()
    }

    pub fn current(&self) -> PointCloud {
        PointCloud::from_flat(self.dim, self.q_curr.clone()).expect("state holds a valid cloud")
    }
}

/// One row of the iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub max_grad_norm: f64,
    pub cost: f64,
    pub fill_distance_q: f64,
    pub wall_ms: f64,
}

pub fn trace_to_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from("iter,max_grad_norm,cost,fill_distance_Q,wall_ms\n");
    for r in trace {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?}\n",
            r.iter, r.max_grad_norm, r.cost, r.fill_distance_q, r.wall_ms
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    /// The iterate moved.
    Updated,
    /// The gradient at the current iterate is below the stopping tolerance.
    Converged,
}

pub struct Solver {
    problem: Problem,
    rule: StepRule,
    state: SolverState,
    trace: Vec<TraceRecord>,
    pool: Option<rayon::ThreadPool>,
    diagnostics: bool,
}

impl Solver {
    pub fn new(problem: Problem, initial: &PointCloud, rule: StepRule, threads: Option<usize>) -> Result<Self> {
        if initial.dim() != problem.points.dim() {
            return Err(Error::DimensionMismatch {
                expected: problem.points.dim(),
                got: initial.dim(),
            });
        }
        let pool = match threads {
            Some(t) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            ),
            None => None,
        };
        let count = initial.len();
        Ok(Self {
            problem,
            rule,
            state: SolverState {
                dim: initial.dim(),
                q_curr: initial.as_flat().to_vec(),
                q_prev: None,
                grad_curr: None,
                grad_prev: None,
                lambda: None,
                step: vec![rule.initial_step; count],
                iter: 0,
                grad_norms: vec![f64::NAN; count],
            },
            trace: Vec::new(),
            pool,
            diagnostics: true,
        })
    }

    /// Turns off the per-iteration cost and fill-distance records.
    pub fn without_diagnostics(mut self) -> Self {
        self.diagnostics = false;
        self
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn rule(&self) -> &StepRule {
        &self.rule
    }

    fn all_terms(&self, snap: &Snapshot) -> Result<Vec<GradientTerms>> {
        let count = snap.coords.len() / self.state.dim;
        let eval = || {
            (0..count)
                .into_par_iter()
                .map(|i| self.problem.terms_in(snap, i))
                .collect::<Result<Vec<_>>>()
        };
        match &self.pool {
            Some(pool) => pool.install(eval),
            None => eval(),
        }
    }

    /// Evaluates the gradient at Q^(k) and, unless converged, moves to
    /// Q^(k+1).
    pub fn step(&mut self) -> Result<StepOutcome> {
        let k = self.state.iter;
        self.step_inner()
            .map_err(|e| Error::Aborted { iter: k, source: Box::new(e) })
    }

    fn step_inner(&mut self) -> Result<StepOutcome> {
        let started = Instant::now();
        let n = self.state.dim;
        let snap = self.problem.snapshot_flat(self.state.q_curr.clone());
        let terms = self.all_terms(&snap)?;

        if self.state.lambda.is_none() {
            let lambda = terms
                .iter()
                .map(|t| self.problem.lambda_from_terms(t))
                .collect::<Result<Vec<_>>>()?;
            self.state.lambda = Some(lambda);
        }
        let lambda = self.state.lambda.as_ref().expect("initialised above");

        let mut grad = Vec::with_capacity(self.state.q_curr.len());
        for (i, t) in terms.iter().enumerate() {
            grad.extend(combine(t, lambda[i]));
        }
        let mut max_norm = 0.0f64;
        for (i, g) in grad.chunks_exact(n).enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    iter: self.state.iter,
                    point: i,
                });
            }
            let norm = self.problem.sketch.norm(g)?;
            self.state.grad_norms[i] = norm;
            max_norm = max_norm.max(norm);
        }

        let converged = max_norm < self.rule.stop_tol;
        if !converged {
            let mut next = self.state.q_curr.clone();
            for (i, (q_next, g)) in next.chunks_exact_mut(n).zip(grad.chunks_exact(n)).enumerate() {
                let gamma = match (&self.state.q_prev, &self.state.grad_curr) {
                    (Some(prev), Some(prev_grad)) => {
                        let q = &self.state.q_curr[i * n..(i + 1) * n];
                        let dq: Vec<f64> = q.iter().zip(&prev[i * n..(i + 1) * n]).map(|(a, b)| a - b).collect();
                        let dg: Vec<f64> = g.iter().zip(&prev_grad[i * n..(i + 1) * n]).map(|(a, b)| a - b).collect();
                        bb_step(&dq, &dg, &self.rule)
                    }
                    _ => self.rule.initial_step,
                };
                self.state.step[i] = gamma;
                // bound the displacement, not just γ: β grows like r⁻⁵
                let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let scale = if gamma * g_norm > self.rule.max_move {
                    self.rule.max_move / g_norm
                } else {
                    gamma
                };
                for (x, gi) in q_next.iter_mut().zip(g) {
                    *x -= scale * gi;
                }
            }
            self.state.q_prev = Some(std::mem::replace(&mut self.state.q_curr, next));
            self.state.grad_prev = self.state.grad_curr.replace(grad);
        } else {
            self.state.grad_prev = self.state.grad_curr.replace(grad);
        }
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;

        let (cost, fill) = if self.diagnostics {
            let count = snap.coords.len() / n;
            let cost = self.problem.cost_in(&snap, lambda)?;
            let fill = if count >= 2 {
                let cloud = PointCloud::from_flat(n, snap.coords.clone())?;
                fill_distance(&cloud, &self.problem.sketch)?
            } else {
                f64::NAN
            };
            (cost, fill)
        } else {
            (f64::NAN, f64::NAN)
        };
        self.trace.push(TraceRecord {
            iter: self.state.iter,
            max_grad_norm: max_norm,
            cost,
            fill_distance_q: fill,
            wall_ms,
        });

        if converged {
            Ok(StepOutcome::Converged)
        } else {
            self.state.iter += 1;
            Ok(StepOutcome::Updated)
        }
    }

    /// Iterates until convergence or `max_iters` updates.
    pub fn run(&mut self, max_iters: usize) -> Result<RunStatus> {
        while self.state.iter < max_iters {
            if self.step()? == StepOutcome::Converged {
                return Ok(RunStatus::Converged);
            }
        }
        Ok(RunStatus::MaxIters)
    }

    pub fn reconstruction(&self) -> PointCloud {
        self.state.current()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIters,
}

/// Everything fixed before the first iteration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub sketch: SketchMatrix,
    pub initial: PointCloud,
    pub initial_indices: Vec<usize>,
    pub supports: SupportParams,
    pub rule: StepRule,
}

/// Draws Q⁰ from `points` according to `mode`. Returns the chosen indices.
pub fn initial_indices(
    points: &PointCloud,
    size: usize,
    mode: InitMode,
    sketch: &SketchMatrix,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    match mode {
        InitMode::Random => Ok(rng.sample_indices(points.len(), size)),
        InitMode::AroundPoint { index, radius } => {
            let center = sketch.project(points.point(index))?;
            let m = sketch.sketch_dim();
            let near: Vec<usize> = sketch
                .project_cloud(points)?
                .chunks_exact(m)
                .enumerate()
                .filter(|(_, ps)| sq_dist(&center, ps).sqrt() <= radius)
                .map(|(j, _)| j)
                .collect();
            if near.len() < size {
                return Err(Error::Config(format!(
                    "only {} points within {radius} of point {index}, need {size}",
                    near.len()
                )));
            }
            Ok(rng
                .sample_indices(near.len(), size)
                .into_iter()
                .map(|k| near[k])
                .collect())
        }
    }
}

/// Builds the sketch, draws Q⁰, estimates the supports and returns a solver
/// ready to iterate.
pub fn prepare(points: &PointCloud, config: &SolverConfig) -> Result<(Solver, Setup)> {
    config.validate(points.len(), points.dim())?;
    let master = Rng::new(config.seed);
    let sketch = build_sketch(points, config.sketch_dim, &mut master.derive(streams::SKETCH))?;
    let indices = initial_indices(
        points,
        config.q_size,
        config.init,
        &sketch,
        &mut master.derive(streams::INIT),
    )?;
    let initial = points.select(&indices)?;
    let supports = estimate_supports(points, &initial, &sketch, &mut master.derive(streams::SUPPORT))?;
    let rule = config.step_rule(&supports)?;
    let kernel = Kernel::new(&supports, config.eps_h, config.neighbor_cutoff_mult, config.attraction_weights);
    let problem = Problem::new(points.clone(), sketch.clone(), kernel)?;
    let solver = Solver::new(problem, &initial, rule, config.threads)?;
    Ok((
        solver,
        Setup {
            sketch,
            initial,
            initial_indices: indices,
            supports,
            rule,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub setup: Setup,
    pub reconstruction: PointCloud,
    pub lambda: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    pub status: RunStatus,
    pub iterations: usize,
}

/// Full reconstruction of `points` under `config`.
pub fn run(points: &PointCloud, config: &SolverConfig) -> Result<RunOutput> {
    let (mut solver, setup) = prepare(points, config)?;
    let status = solver.run(config.max_iters)?;
    Ok(RunOutput {
        reconstruction: solver.reconstruction(),
        lambda: solver.state().lambda().map(<[f64]>::to_vec).unwrap_or_default(),
        trace: solver.trace().to_vec(),
        status,
        iterations: solver.state().iter(),
        setup,
    })
}
