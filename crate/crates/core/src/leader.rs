//! The leader: stochastic gradient descent on the empirical tracking risk
//! under multiplicative truncated-normal thickness noise.
//!
//! Each iteration draws `K` perturbations `υ`, solves the follower for every
//! perturbed design `u ⊙ υ`, and differentiates the tracking cost through
//! both the state equation and the follower's optimality condition.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elastic::{check_strictly_feasible, volume, ElasticComponents};
use crate::error::{ElasticError, LeaderError};
use crate::follower::{full_solve, smoothed_objective, solve_follower, FollowerSolution, ForceModel, NewtonOptions};
use crate::mesh::ShellMesh;

/// Truncated normal `TN(1, σ², lower, upper)` thickness perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Standard deviation of the parent normal before truncation.
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma: 0.1, lower: 1e-2, upper: 2.0, seed: 0 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(format!("noise sigma must be finite and >= 0, got {}", self.sigma));
        }
        if !(self.lower.is_finite() && self.upper.is_finite()) {
            return Err("noise truncation bounds must be finite".into());
        }
        if !(self.lower > 0.0 && self.lower < 1.0 && 1.0 < self.upper) {
            return Err(format!("noise bounds must satisfy 0 < lower < 1 < upper, got [{}, {}]", self.lower, self.upper));
        }
        Ok(())
    }

    /// Independent generator for one `(iteration, sample)` pair: the
    /// iteration selects the ChaCha stream and the sample a disjoint block
    /// range inside it.
    pub fn rng(&self, iteration: u64, sample: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(iteration);
        rng.set_word_pos(u128::from(sample) << 36);
        rng
    }

    /// One truncated-normal draw by rejection from the parent normal.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.sigma == 0.0 {
            return 1.0;
        }
        let normal = Normal::new(1.0, self.sigma).expect("sigma validated");
        loop {
            let x = normal.sample(rng);
            if x >= self.lower && x <= self.upper {
                return x;
            }
        }
    }

    /// Per-face factors for one sample; frozen faces get exactly 1.
    pub fn sample_perturbation(&self, iteration: u64, sample: u64, frozen: &[bool]) -> Vec<f64> {
        let mut rng = self.rng(iteration, sample);
        frozen.iter().map(|&fixed| if fixed { 1.0 } else { self.draw(&mut rng) }).collect()
    }
}

/// Which vertices enter the tracking cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TrackingSelector {
    Full,
    /// Vertices with `z >= z_min`, optionally within `radius` of the
    /// horizontal center of the bounding box.
    Plateau {
        z_min: f64,
        #[serde(default)]
        radius: Option<f64>,
    },
    Vertices(Vec<usize>),
}

impl TrackingSelector {
    pub fn indicator(&self, mesh: &ShellMesh) -> Result<Vec<bool>, String> {
        let n = mesh.positions.len();
        let chi: Vec<bool> = match self {
            TrackingSelector::Full => vec![true; n],
            TrackingSelector::Plateau { z_min, radius } => {
                let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
                for p in &mesh.positions {
                    lo = [lo[0].min(p.x), lo[1].min(p.y)];
                    hi = [hi[0].max(p.x), hi[1].max(p.y)];
                }
                let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
                mesh.positions
                    .iter()
                    .map(|p| {
                        let inside = radius.is_none_or(|r| (p.x - center[0]).hypot(p.y - center[1]) <= r);
                        p.z >= *z_min && inside
                    })
                    .collect()
            }
            TrackingSelector::Vertices(list) => {
                let mut chi = vec![false; n];
                for &v in list {
                    *chi.get_mut(v).ok_or_else(|| format!("tracking vertex {v} out of range"))? = true;
                }
                chi
            }
        };
        if !chi.iter().any(|&c| c) {
            return Err("tracking set is empty".into());
        }
        Ok(chi)
    }
}

/// `χ_v a_v` repeated for the three coordinates of each vertex.
pub fn tracking_weights(components: &ElasticComponents, chi: &[bool]) -> Vec<f64> {
    components
        .vertex_areas()
        .iter()
        .zip(chi)
        .flat_map(|(&a, &c)| {
            let w = if c { a } else { 0.0 };
            [w, w, w]
        })
        .collect()
}

fn weighted_square(weights: &[f64], y: &[f64]) -> f64 {
    weights.iter().zip(y).map(|(w, y)| w * y * y).sum()
}

/// `J = Σ_v χ_v a_v |y_v|²` with `y = H[u]⁻¹ M f`.
pub fn tracking_cost(components: &ElasticComponents, u: &[f64], f: &[f64], chi: &[bool]) -> Result<f64, ElasticError> {
    let factor = components.factorize(u)?;
    let y = components.solve_state(&factor, f);
    Ok(weighted_square(&tracking_weights(components, chi), &y.values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypergradientMode {
    /// Differentiate through the follower's optimality condition.
    #[default]
    Full,
    /// Treat the follower's coefficients as constants.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeaderConfig {
    pub alpha_u: f64,
    pub alpha_v: f64,
    pub lower: f64,
    pub upper: f64,
    pub volume_max: f64,
    pub samples: usize,
    pub iterations: usize,
    /// Initial step size; probed on the first batch when absent.
    pub tau0: Option<f64>,
    pub i_half: f64,
    pub hypergradient: HypergradientMode,
    /// Drop samples whose follower fails instead of aborting.
    pub exclude_failed_samples: bool,
    pub max_feasibility_halvings: usize,
}

impl Default for LeaderConfig {
    fn default() -> Self {
        Self {
            alpha_u: 1.0,
            alpha_v: 1e-5,
            lower: 0.01,
            upper: 0.2,
            volume_max: 60.0,
            samples: 128,
            iterations: 200,
            tau0: None,
            i_half: 100.0,
            hypergradient: HypergradientMode::Full,
            exclude_failed_samples: false,
            max_feasibility_halvings: 60,
        }
    }
}

impl LeaderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha_u > 0.0 && self.alpha_v > 0.0) {
            return Err("barrier weights alpha_u and alpha_v must be positive".into());
        }
        if !(0.0 < self.lower && self.lower < self.upper) {
            return Err(format!("thickness bounds must satisfy 0 < lower < upper, got [{}, {}]", self.lower, self.upper));
        }
        if !(self.volume_max > 0.0) {
            return Err("volume_max must be positive".into());
        }
        if self.samples == 0 {
            return Err("samples must be at least 1".into());
        }
        if !(self.i_half > 0.0) {
            return Err("i_half must be positive".into());
        }
        if let Some(t) = self.tau0 {
            if !(t > 0.0) {
                return Err("tau0 must be positive".into());
            }
        }
        Ok(())
    }

    /// Uniform start `min(0.9 V⁺ / Σ a_t, (u⁻ + u⁺)/2)`.
    pub fn initial_thickness(&self, face_areas: &[f64]) -> Vec<f64> {
        let total: f64 = face_areas.iter().sum();
        let value = (0.9 * self.volume_max / total).min(0.5 * (self.lower + self.upper));
        vec![value; face_areas.len()]
    }

    pub fn step_size(&self, tau0: f64, iteration: usize) -> f64 {
        tau0 / (1.0 + iteration as f64 / self.i_half)
    }
}

/// Everything fixed across leader iterations.
pub struct LeaderProblem<'a> {
    pub components: &'a ElasticComponents,
    pub model: &'a ForceModel,
    pub tracking: Vec<bool>,
    pub follower: NewtonOptions,
}

impl LeaderProblem<'_> {
    pub fn weights(&self) -> Vec<f64> {
        tracking_weights(self.components, &self.tracking)
    }
}

/// Per-face derivative of `J[ũ, B F*(ũ)]` with respect to `u`, where
/// `ũ = u ⊙ υ`, from a converged follower solution at `ũ`.
///
/// With `Z = H⁻¹MB`, `y = ZF*`, `p = H⁻¹(2χMy)` and `G` the follower
/// Hessian, the result is `υ_t (2Zw − p)ᵀ (∂H/∂ũ_t) y` with
/// `w = G⁻¹ ∇_F J`. The second return value is true when `G` is singular
/// and only the state channel (`−p`) was used.
pub fn hypergradient(
    problem: &LeaderProblem,
    u_tilde: &[f64],
    upsilon: &[f64],
    solution: &FollowerSolution,
    mode: HypergradientMode,
) -> Result<(Vec<f64>, bool), LeaderError> {
    let comps = problem.components;
    let y = &solution.displacement.values;
    let dy: Vec<f64> = problem.weights().iter().zip(y).map(|(w, y)| 2.0 * w * y).collect();
    let p = full_solve(comps, &solution.factor, &dy);
    let mut q: Vec<f64> = p.iter().map(|x| -x).collect();
    let mut singular = false;
    if mode == HypergradientMode::Full {
        let z = &solution.reduced.responses;
        let grad_f = DVector::from_iterator(z.len(), z.iter().map(|zj| zj.iter().zip(&dy).map(|(a, b)| a * b).sum()));
        let g = smoothed_objective(&solution.result.coefficients, &solution.reduced.matrix, problem.model)?.hessian;
        match solve_symmetric(&g, &grad_f) {
            Some(w) => {
                for (zj, &wj) in z.iter().zip(w.iter()) {
                    for (qi, zi) in q.iter_mut().zip(zj) {
                        *qi += 2.0 * wj * zi;
                    }
                }
            }
            None => singular = true,
        }
    }
    let bil = comps.dh_du_bilinear(u_tilde, &q, y);
    Ok((bil.iter().zip(upsilon).map(|(b, v)| b * v).collect(), singular))
}

/// Solves `G w = b` for symmetric `G`, `None` when `G` is numerically singular.
fn solve_symmetric(g: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let eig = g.clone().symmetric_eigen();
    let largest = eig.eigenvalues.amax();
    if !(largest > 0.0) || eig.eigenvalues.iter().any(|l| l.abs() <= 1e-12 * largest) {
        return None;
    }
    let coeffs = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(coeffs.len(), coeffs.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c / l));
    Some(&eig.eigenvectors * scaled)
}

/// `−α^u Σ a_t (log(u_t − u⁻) + log(u⁺ − u_t)) − α^V log(V⁺ − Σ a_t u_t)`.
/// Frozen faces are excluded from the box term and get a zero gradient.
pub fn leader_barrier(
    u: &[f64],
    face_areas: &[f64],
    frozen: &[bool],
    config: &LeaderConfig,
) -> Result<(f64, Vec<f64>), LeaderError> {
    check_strictly_feasible(u, frozen, face_areas, config.lower, config.upper, config.volume_max)
        .map_err(LeaderError::Infeasible)?;
    let slack = config.volume_max - volume(u, face_areas);
    let mut value = -config.alpha_v * slack.ln();
    let mut grad = vec![0.0; u.len()];
    for t in (0..u.len()).filter(|&t| !frozen[t]) {
        let (a, lo, hi) = (face_areas[t], u[t] - config.lower, config.upper - u[t]);
        value -= config.alpha_u * a * (lo.ln() + hi.ln());
        grad[t] = -config.alpha_u * a * (1.0 / lo - 1.0 / hi) + config.alpha_v * a / slack;
    }
    Ok((value, grad))
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub upsilon: Vec<f64>,
    pub cost: f64,
    /// Empty unless requested.
    pub gradient: Vec<f64>,
    pub coefficients: DVector<f64>,
    pub compliance: f64,
    pub newton_iterations: usize,
    pub converged: bool,
    /// Follower Hessian was singular; gradient uses the state channel only.
    pub singular: bool,
}

/// Solves the follower for one perturbed design, warm-starting from `warm`
/// and falling back to the model's seed set when that fails.
pub fn evaluate_sample(
    problem: &LeaderProblem,
    u: &[f64],
    upsilon: Vec<f64>,
    warm: Option<&DVector<f64>>,
    gradient: Option<HypergradientMode>,
) -> Result<SampleOutcome, LeaderError> {
    let u_tilde: Vec<f64> = u.iter().zip(&upsilon).map(|(a, b)| a * b).collect();
    let seeds = problem.model.default_seeds();
    // a warm start already sits near the target barrier's maximizer
    let warm_options = NewtonOptions { continuation: false, ..problem.follower };
    let attempt = warm
        .filter(|w| problem.model.is_strictly_feasible(w))
        .and_then(|w| solve_follower(problem.components, &u_tilde, problem.model, std::slice::from_ref(w), &warm_options).ok())
        .filter(|s| s.result.converged);
    let solution = match attempt {
        Some(s) => s,
        None => solve_follower(problem.components, &u_tilde, problem.model, &seeds, &problem.follower)?,
    };
    let cost = weighted_square(&problem.weights(), &solution.displacement.values);
    let (grad, singular) = match gradient {
        Some(mode) if solution.result.converged => hypergradient(problem, &u_tilde, &upsilon, &solution, mode)?,
        _ => (Vec::new(), false),
    };
    Ok(SampleOutcome {
        upsilon,
        cost,
        gradient: grad,
        compliance: solution.result.compliance,
        newton_iterations: solution.result.iterations,
        converged: solution.result.converged,
        coefficients: solution.result.coefficients,
        singular,
    })
}

/// Outcomes of one batch, in sample order; `None` marks excluded samples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub outcomes: Vec<Option<SampleOutcome>>,
}

impl Batch {
    pub fn costs(&self) -> Vec<f64> {
        self.outcomes.iter().flatten().map(|o| o.cost).collect()
    }

    /// Mean shifted by the first value, exact for constant batches.
    pub fn mean(&self) -> f64 {
        let c = self.costs();
        let shift = c[0];
        shift + c.iter().map(|x| x - shift).sum::<f64>() / c.len() as f64
    }

    pub fn standard_error(&self) -> f64 {
        let c = self.costs();
        if c.len() < 2 {
            return 0.0;
        }
        let m = self.mean();
        let var = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (c.len() - 1) as f64;
        (var / c.len() as f64).sqrt()
    }

    /// Sample-ordered mean of the per-sample gradients.
    pub fn mean_gradient(&self, faces: usize) -> Vec<f64> {
        let mut g = vec![0.0; faces];
        let mut count = 0usize;
        for o in self.outcomes.iter().flatten() {
            for (gi, oi) in g.iter_mut().zip(&o.gradient) {
                *gi += oi;
            }
            count += 1;
        }
        g.iter_mut().for_each(|x| *x /= count as f64);
        g
    }

    pub fn warm_starts(&self) -> Vec<Option<DVector<f64>>> {
        self.outcomes.iter().map(|o| o.as_ref().map(|o| o.coefficients.clone())).collect()
    }
}

/// Evaluates `samples` draws of iteration `iteration` in parallel.
pub fn evaluate_batch(
    problem: &LeaderProblem,
    u: &[f64],
    noise: &NoiseModel,
    iteration: u64,
    samples: usize,
    warm: &[Option<DVector<f64>>],
    gradient: Option<HypergradientMode>,
    exclude_failed: bool,
) -> Result<Batch, LeaderError> {
    let frozen = problem.components.frozen();
    let results: Vec<Result<SampleOutcome, LeaderError>> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let upsilon = noise.sample_perturbation(iteration, k as u64, frozen);
            evaluate_sample(problem, u, upsilon, warm.get(k).and_then(Option::as_ref), gradient)
        })
        .collect();
    let mut outcomes = Vec::with_capacity(samples);
    for (k, r) in results.into_iter().enumerate() {
        let failure = match r {
            Ok(o) if o.converged => {
                outcomes.push(Some(o));
                continue;
            }
            Ok(o) => LeaderError::FollowerNotConverged { sample: k, iterations: o.newton_iterations },
            Err(e) => e,
        };
        if !exclude_failed {
            return Err(failure);
        }
        log::warn!("sample {k} excluded: {failure}");
        outcomes.push(None);
    }
    if outcomes.iter().all(Option::is_none) {
        return Err(LeaderError::NoSamples);
    }
    Ok(Batch { outcomes })
}

/// `Ĵ[u]` and the per-sample costs for iteration stream `iteration`.
pub fn empirical_risk(
    problem: &LeaderProblem,
    u: &[f64],
    noise: &NoiseModel,
    iteration: u64,
    samples: usize,
    exclude_failed: bool,
) -> Result<(f64, Vec<f64>), LeaderError> {
    let batch = evaluate_batch(problem, u, noise, iteration, samples, &[], None, exclude_failed)?;
    Ok((batch.mean(), batch.costs()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub empirical_risk: f64,
    pub relative_cost: f64,
    pub barrier: f64,
    pub volume: f64,
    /// Step taken from this iterate; 0 for the final record.
    pub step_size: f64,
    pub wall_ms: f64,
    pub standard_error: f64,
    pub mean_newton_iterations: f64,
    pub singular_samples: usize,
    pub excluded_samples: usize,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<IterationRecord>,
    pub thickness: Vec<f64>,
    pub tau0: Option<f64>,
    /// Coefficients of the last batch, by sample index.
    pub last_coefficients: Vec<Option<DVector<f64>>>,
}

fn record(
    iteration: usize,
    batch: &Batch,
    reference: Option<f64>,
    barrier: f64,
    vol: f64,
    step: f64,
    started: Instant,
) -> IterationRecord {
    let risk = batch.mean();
    let kept: Vec<&SampleOutcome> = batch.outcomes.iter().flatten().collect();
    IterationRecord {
        iteration,
        empirical_risk: risk,
        relative_cost: risk / reference.unwrap_or(risk),
        barrier,
        volume: vol,
        step_size: step,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        standard_error: batch.standard_error(),
        mean_newton_iterations: kept.iter().map(|o| o.newton_iterations as f64).sum::<f64>() / kept.len() as f64,
        singular_samples: kept.iter().filter(|o| o.singular).count(),
        excluded_samples: batch.outcomes.len() - kept.len(),
    }
}

/// Largest `2^-k` fraction of `0.1 (u⁺ − u⁻) / ‖g‖_∞` that keeps `u`
/// strictly feasible and lowers `Ĵ` on the given batch stream.
fn probe_step(
    problem: &LeaderProblem,
    u: &[f64],
    grad: &[f64],
    noise: &NoiseModel,
    config: &LeaderConfig,
    reference: f64,
    warm: &[Option<DVector<f64>>],
) -> Result<f64, LeaderError> {
    let comps = problem.components;
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if gmax == 0.0 {
        return Ok(0.0);
    }
    let base = 0.1 * (config.upper - config.lower) / gmax;
    let mut tau = base;
    for _ in 0..=30 {
        let trial: Vec<f64> = u.iter().zip(grad).map(|(a, g)| a - tau * g).collect();
        let feasible = check_strictly_feasible(&trial, comps.frozen(), comps.face_areas(), config.lower, config.upper, config.volume_max).is_ok();
        if feasible {
            let batch = evaluate_batch(problem, &trial, noise, 0, config.samples, warm, None, config.exclude_failed_samples)?;
            if batch.mean() < reference {
                return Ok(tau);
            }
        }
        tau *= 0.5;
    }
    Ok(tau * 2.0)
}

/// Stochastic gradient descent on `Ĵ + barrier`. `observer` sees every
/// record together with the iterate it describes.
pub fn sgd(
    problem: &LeaderProblem,
    noise: &NoiseModel,
    config: &LeaderConfig,
    u0: &[f64],
    mut observer: impl FnMut(&IterationRecord, &[f64]),
) -> Result<Trajectory, LeaderError> {
    config.validate().map_err(LeaderError::Config)?;
    noise.validate().map_err(LeaderError::Config)?;
    let comps = problem.components;
    let (areas, frozen) = (comps.face_areas(), comps.frozen());
    let started = Instant::now();
    let mut u = u0.to_vec();
    let mut warm: Vec<Option<DVector<f64>>> = Vec::new();
    let mut records = Vec::with_capacity(config.iterations + 1);
    let mut reference = None;
    let mut tau0 = config.tau0;
    for i in 0..=config.iterations {
        let (barrier, barrier_grad) = leader_barrier(&u, areas, frozen, config)?;
        let last = i == config.iterations;
        let mode = (!last).then_some(config.hypergradient);
        let batch = evaluate_batch(problem, &u, noise, i as u64, config.samples, &warm, mode, config.exclude_failed_samples)?;
        let risk = batch.mean();
        reference.get_or_insert(risk);
        warm = batch.warm_starts();
        if last {
            let rec = record(i, &batch, reference, barrier, volume(&u, areas), 0.0, started);
            observer(&rec, &u);
            records.push(rec);
            break;
        }
        let mut grad = batch.mean_gradient(u.len());
        for (g, b) in grad.iter_mut().zip(&barrier_grad) {
            *g += b;
        }
        for (g, &f) in grad.iter_mut().zip(frozen) {
            if f {
                *g = 0.0;
            }
        }
        let base_tau = match tau0 {
            Some(t) => t,
            None => {
                let t = probe_step(problem, &u, &grad, noise, config, risk, &warm)?;
                log::info!("probed initial step size tau0 = {t:e}");
                tau0 = Some(t);
                t
            }
        };
        let mut tau = config.step_size(base_tau, i);
        let mut next = None;
        for _ in 0..=config.max_feasibility_halvings {
            let trial: Vec<f64> = u.iter().zip(&grad).map(|(a, g)| a - tau * g).collect();
            if check_strictly_feasible(&trial, frozen, areas, config.lower, config.upper, config.volume_max).is_ok() {
                next = Some(trial);
                break;
            }
            tau *= 0.5;
        }
        let Some(next) = next else {
            let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            return Err(LeaderError::StepExhausted { iteration: i, grad_norm });
        };
        let rec = record(i, &batch, reference, barrier, volume(&u, areas), tau, started);
        log::debug!("iteration {i}: risk {:.6e} relative {:.4} step {:.3e}", rec.empirical_risk, rec.relative_cost, tau);
        observer(&rec, &u);
        records.push(rec);
        u = next;
    }
    Ok(Trajectory { records, thickness: u, tau0, last_coefficients: warm })
}
