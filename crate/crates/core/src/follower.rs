//! The follower: barrier-smoothed compliance maximization over a
//! low-dimensional force family `f = B F`.
//!
//! With `S = Bᵀ M H[u]⁻¹ M B` the follower maximizes
//!
//! ```text
//! FᵀSF + α Σ_k log Q_k(F)
//! ```
//!
//! by a safeguarded Newton ascent with Armijo backtracking, started from a
//! fixed set of seeds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::elastic::{Displacement, ElasticComponents, StiffnessFactor};
use crate::error::FollowerError;
use crate::mesh::{Point, ShellMesh};

pub const ARMIJO_C: f64 = 1e-4;
pub const BACKTRACK_FACTOR: f64 = 0.5;
pub const MAX_HALVINGS: usize = 40;

/// Smooth constraint `Q(F) > 0` on the force coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `radius² − Σ_{i ∈ indices} F_i²`.
    Ball { indices: Vec<usize>, radius: f64 },
    /// `F_index − bound`.
    Lower { index: usize, bound: f64 },
    /// `bound − F_index`.
    Upper { index: usize, bound: f64 },
}

impl Constraint {
    pub fn value(&self, f: &DVector<f64>) -> f64 {
        match self {
            Constraint::Ball { indices, radius } => radius * radius - indices.iter().map(|&i| f[i] * f[i]).sum::<f64>(),
            Constraint::Lower { index, bound } => f[*index] - bound,
            Constraint::Upper { index, bound } => bound - f[*index],
        }
    }

    pub fn gradient(&self, f: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(f.len());
        match self {
            Constraint::Ball { indices, .. } => {
                for &i in indices {
                    g[i] = -2.0 * f[i];
                }
            }
            Constraint::Lower { index, .. } => g[*index] = 1.0,
            Constraint::Upper { index, .. } => g[*index] = -1.0,
        }
        g
    }

    pub fn hessian(&self, dim: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(dim, dim);
        if let Constraint::Ball { indices, .. } = self {
            for &i in indices {
                h[(i, i)] = -2.0;
            }
        }
        h
    }
}

/// Cylinder radius (horizontal) and height (vertical) of the admissible loads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub fmax_xy: f64,
    pub fmax_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceModel {
    /// `3|V| × d`, zero rows on Dirichlet vertices.
    pub basis: DMatrix<f64>,
    pub constraints: Vec<Constraint>,
    /// Barrier weight `α^F`.
    pub alpha: f64,
    pub cylinder: Option<Cylinder>,
}

impl ForceModel {
    /// Wind in the first two coefficients bounded by a disc, downward load
    /// in the third bounded by `[0, fmax_z]`.
    pub fn cylinder(basis: DMatrix<f64>, fmax_xy: f64, fmax_z: f64, alpha: f64) -> Self {
        let constraints = vec![
            Constraint::Ball { indices: vec![0, 1], radius: fmax_xy },
            Constraint::Lower { index: 2, bound: 0.0 },
            Constraint::Upper { index: 2, bound: fmax_z },
        ];
        Self { basis, constraints, alpha, cylinder: Some(Cylinder { fmax_xy, fmax_z }) }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn constraint_values(&self, f: &DVector<f64>) -> Vec<f64> {
        self.constraints.iter().map(|c| c.value(f)).collect()
    }

    pub fn is_strictly_feasible(&self, f: &DVector<f64>) -> bool {
        self.constraints.iter().all(|c| c.value(f) > 0.0)
    }

    /// `f = B F` on all vertex DOFs.
    pub fn force(&self, f: &DVector<f64>) -> Vec<f64> {
        (&self.basis * f).as_slice().to_vec()
    }

    /// Multi-start points: four horizontal directions at 90% of the radius,
    /// each at 10% and 90% of the height, then the cylinder center.
    pub fn default_seeds(&self) -> Vec<DVector<f64>> {
        let Some(Cylinder { fmax_xy, fmax_z }) = self.cylinder else {
            return Vec::new();
        };
        let r = 0.9 * fmax_xy;
        let mut seeds = Vec::with_capacity(9);
        for (a, b) in [(r, 0.0), (-r, 0.0), (0.0, r), (0.0, -r)] {
            for h in [0.1, 0.9] {
                seeds.push(DVector::from_vec(vec![a, b, h * fmax_z]));
            }
        }
        seeds.push(DVector::from_vec(vec![0.0, 0.0, 0.5 * fmax_z]));
        seeds
    }
}

/// Wind along `+x`, wind along `+y`, downward overlay: per vertex
/// `|n·e_x| e_x`, `|n·e_y| e_y` and `−|n·e_z| e_z`. Dirichlet rows are zero.
pub fn build_force_basis(mesh: &ShellMesh, normals: &[Point]) -> DMatrix<f64> {
    let n = mesh.positions.len();
    let fixed = mesh.is_dirichlet();
    let mut basis = DMatrix::zeros(3 * n, 3);
    for v in (0..n).filter(|&v| !fixed[v]) {
        basis[(3 * v, 0)] = normals[v].x.abs();
        basis[(3 * v + 1, 1)] = normals[v].y.abs();
        basis[(3 * v + 2, 2)] = -normals[v].z.abs();
    }
    basis
}

/// `S = Bᵀ M H⁻¹ M B` together with the responses `Z = H⁻¹ M B`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedCompliance {
    pub matrix: DMatrix<f64>,
    /// Column `j` of `Z` as a full-length DOF vector.
    pub responses: Vec<Vec<f64>>,
}

impl ReducedCompliance {
    /// Displacement `y = Z F`.
    pub fn displacement(&self, f: &DVector<f64>) -> Vec<f64> {
        let n = self.responses.first().map_or(0, Vec::len);
        let mut y = vec![0.0; n];
        for (z, &c) in self.responses.iter().zip(f.iter()) {
            for (yi, zi) in y.iter_mut().zip(z) {
                *yi += c * zi;
            }
        }
        y
    }
}

/// Builds `S` with one solve per basis column. `solve` maps a full-length
/// right-hand side `r` to `H⁻¹ r`; `mass` is the diagonal of `M`.
pub fn reduce_compliance(
    solve: impl Fn(&[f64]) -> Vec<f64>,
    mass: &[f64],
    basis: &DMatrix<f64>,
) -> ReducedCompliance {
    let d = basis.ncols();
    let loads: Vec<Vec<f64>> = (0..d)
        .map(|j| basis.column(j).iter().zip(mass).map(|(b, m)| b * m).collect())
        .collect();
    let responses: Vec<Vec<f64>> = loads.iter().map(|r| solve(r)).collect();
    let mut matrix = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            matrix[(i, j)] = loads[i].iter().zip(&responses[j]).map(|(a, b)| a * b).sum();
        }
    }
    let matrix = (&matrix + matrix.transpose()) * 0.5;
    ReducedCompliance { matrix, responses }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedValue {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

fn check_feasible(f: &DVector<f64>, model: &ForceModel) -> Result<Vec<f64>, FollowerError> {
    if f.len() != model.dim() {
        return Err(FollowerError::Dimension { expected: model.dim(), got: f.len() });
    }
    let q = model.constraint_values(f);
    if let Some((k, &value)) = q.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(FollowerError::Infeasible { constraint: k, value });
    }
    Ok(q)
}

/// `FᵀSF + α Σ log Q_k(F)` only.
pub fn smoothed_value(f: &DVector<f64>, s: &DMatrix<f64>, model: &ForceModel) -> Result<f64, FollowerError> {
    value_at(f, s, model, model.alpha)
}

fn value_at(f: &DVector<f64>, s: &DMatrix<f64>, model: &ForceModel, alpha: f64) -> Result<f64, FollowerError> {
    let q = check_feasible(f, model)?;
    Ok(f.dot(&(s * f)) + alpha * q.iter().map(|v| v.ln()).sum::<f64>())
}

/// Value, gradient and Hessian of the smoothed follower objective.
pub fn smoothed_objective(f: &DVector<f64>, s: &DMatrix<f64>, model: &ForceModel) -> Result<SmoothedValue, FollowerError> {
    objective_at(f, s, model, model.alpha)
}

fn objective_at(f: &DVector<f64>, s: &DMatrix<f64>, model: &ForceModel, alpha: f64) -> Result<SmoothedValue, FollowerError> {
    let q = check_feasible(f, model)?;
    let d = f.len();
    let sf = s * f;
    let mut value = f.dot(&sf);
    let mut gradient = sf * 2.0;
    let mut hessian = s * 2.0;
    for (c, &qk) in model.constraints.iter().zip(&q) {
        let g = c.gradient(f);
        value += alpha * qk.ln();
        gradient += &g * (alpha / qk);
        hessian += (c.hessian(d) * qk - &g * g.transpose()) * (alpha / (qk * qk));
    }
    Ok(SmoothedValue { value, gradient, hessian })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonOptions {
    /// Armijo steps per barrier stage.
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Solve a short sequence of larger barrier weights first.
    pub continuation: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iter: 100, grad_tol: 1e-9, continuation: true }
    }
}

/// Relative size of the predicted increase below which the iteration is at
/// the roundoff floor of the objective and further steps are meaningless.
const DECREMENT_FLOOR: f64 = 1e-14;
/// Looser floor that ends an intermediate barrier stage.
const STAGE_FLOOR: f64 = 1e-8;
const MAX_POLISH_STEPS: usize = 5;
/// First barrier weight relative to the compliance at the start point.
const CONTINUATION_START: f64 = 0.1;
const CONTINUATION_FACTOR: f64 = 10.0;

/// Monotone objective history of one intermediate barrier stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub alpha: f64,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowerResult {
    pub coefficients: DVector<f64>,
    /// Smoothed objective at the result.
    pub objective: f64,
    /// Pure compliance `FᵀSF`.
    pub compliance: f64,
    /// Armijo-verified Newton steps over all stages.
    pub iterations: usize,
    /// Final Newton steps whose objective change is below floating-point
    /// resolution, accepted because they reduce the gradient.
    pub polish_steps: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Smoothed objective at every Armijo iterate of the final stage, its
    /// starting point included.
    pub trace: Vec<f64>,
    /// Intermediate stages with larger barrier weights, in solve order.
    pub stages: Vec<StageTrace>,
}

fn ascent_direction(obj: &SmoothedValue) -> DVector<f64> {
    let g = &obj.gradient;
    if let Some(p) = obj.hessian.clone().lu().solve(&(-g)) {
        if g.dot(&p) > 0.0 && p.iter().all(|x| x.is_finite()) {
            return p;
        }
    }
    // Saddle-free step: invert |λ| per eigendirection, so every direction
    // keeps its own curvature scale and the step still ascends.
    let eig = obj.hessian.clone().symmetric_eigen();
    let floor = 1e-12 * eig.eigenvalues.amax().max(1e-300);
    let mut p = DVector::zeros(g.len());
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        p += v * (v.dot(g) / lambda.abs().max(floor));
    }
    if g.dot(&p) > 0.0 && p.iter().all(|x| x.is_finite()) {
        return p;
    }
    g.clone()
}

struct StageResult {
    f: DVector<f64>,
    obj: SmoothedValue,
    trace: Vec<f64>,
    iterations: usize,
    polish_steps: usize,
    converged: bool,
}

/// Armijo ascent at a fixed barrier weight. `floor` bounds the relative
/// predicted increase that still counts as progress; polishing runs only
/// when `polish` is set.
fn ascend_stage(
    s: &DMatrix<f64>,
    model: &ForceModel,
    alpha: f64,
    start: DVector<f64>,
    options: &NewtonOptions,
    floor: f64,
    polish: bool,
) -> Result<StageResult, FollowerError> {
    let mut f = start;
    let mut obj = objective_at(&f, s, model, alpha)?;
    let mut trace = vec![obj.value];
    let mut converged = false;
    let mut at_floor = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        if obj.gradient.amax() <= options.grad_tol {
            converged = true;
            break;
        }
        let p = ascent_direction(&obj);
        let slope = obj.gradient.dot(&p);
        let scale = f.dot(&(s * &f)).abs() + alpha * model.constraint_values(&f).iter().map(|q| q.ln().abs()).sum::<f64>();
        if slope <= floor * scale {
            at_floor = true;
            break;
        }
        let mut tau = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &f + &p * tau;
            if let Ok(value) = value_at(&trial, s, model, alpha) {
                if value >= obj.value + ARMIJO_C * tau * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            tau *= BACKTRACK_FACTOR;
        }
        let Some(next) = accepted else {
            // no representable increase left
            at_floor = slope <= 1e4 * floor * scale;
            break;
        };
        f = next;
        obj = objective_at(&f, s, model, alpha)?;
        trace.push(obj.value);
        iterations += 1;
    }
    let mut polish_steps = 0;
    if at_floor {
        converged = true;
        // The objective can no longer certify progress, but the gradient
        // still can: take full Newton steps while they shrink it.
        while polish && polish_steps < MAX_POLISH_STEPS && obj.gradient.amax() > options.grad_tol {
            let trial = &f + ascent_direction(&obj);
            let Ok(next) = objective_at(&trial, s, model, alpha) else { break };
            if !(next.gradient.amax() < obj.gradient.amax()) {
                break;
            }
            f = trial;
            obj = next;
            polish_steps += 1;
        }
    }
    if obj.gradient.amax() <= options.grad_tol {
        converged = true;
    }
    Ok(StageResult { f, obj, trace, iterations, polish_steps, converged })
}

/// Barrier weights of the continuation, ending with the model's own weight.
fn barrier_schedule(s: &DMatrix<f64>, model: &ForceModel, start: &DVector<f64>, continuation: bool) -> Vec<f64> {
    let mut alphas = vec![model.alpha];
    if continuation && start.len() == s.nrows() {
        let top = CONTINUATION_START * start.dot(&(s * start)).abs();
        let mut a = model.alpha * CONTINUATION_FACTOR;
        while a < top {
            alphas.push(a);
            a *= CONTINUATION_FACTOR;
        }
    }
    alphas.reverse();
    alphas
}

/// Safeguarded Newton ascent with Armijo backtracking from `start`.
///
/// Near the rim of a curved feasible set a small barrier weight forces tiny
/// steps along the boundary, so the ascent first follows the maximizers of
/// larger weights down to the model's weight, warm-starting each stage. The
/// final stage is a plain ascent on the model's objective.
pub fn newton_ascent(
    s: &DMatrix<f64>,
    model: &ForceModel,
    start: &DVector<f64>,
    options: &NewtonOptions,
) -> Result<FollowerResult, FollowerError> {
    let schedule = barrier_schedule(s, model, start, options.continuation);
    let (&target, intermediate) = schedule.split_last().expect("schedule ends with the target weight");
    let mut f = start.clone();
    let mut iterations = 0;
    let mut stages = Vec::with_capacity(intermediate.len());
    for &alpha in intermediate {
        let r = ascend_stage(s, model, alpha, f, options, STAGE_FLOOR, false)?;
        iterations += r.iterations;
        stages.push(StageTrace { alpha, trace: r.trace });
        f = r.f;
    }
    let r = ascend_stage(s, model, target, f, options, DECREMENT_FLOOR, true)?;
    Ok(FollowerResult {
        compliance: r.f.dot(&(s * &r.f)),
        objective: r.obj.value,
        gradient_norm: r.obj.gradient.amax(),
        coefficients: r.f,
        iterations: iterations + r.iterations,
        polish_steps: r.polish_steps,
        converged: r.converged,
        trace: r.trace,
        stages,
    })
}

/// Follower answer for one thickness field with everything the hypergradient
/// needs downstream.
#[derive(Debug, Clone)]
pub struct FollowerSolution {
    pub result: FollowerResult,
    pub reduced: ReducedCompliance,
    pub factor: StiffnessFactor,
    pub displacement: Displacement,
}

/// Full-length `H⁻¹ r` through the reduced factorization.
pub fn full_solve(components: &ElasticComponents, factor: &StiffnessFactor, rhs: &[f64]) -> Vec<f64> {
    components.expand(&factor.solve(&components.reduce(rhs)))
}

/// Factorizes `H[u]`, reduces to `S` and runs the ascent from every seed;
/// the result with the largest smoothed objective wins (first on ties).
/// Infeasible seeds are skipped.
pub fn solve_follower(
    components: &ElasticComponents,
    u: &[f64],
    model: &ForceModel,
    seeds: &[DVector<f64>],
    options: &NewtonOptions,
) -> Result<FollowerSolution, FollowerError> {
    let factor = components.factorize(u)?;
    let mass = components.mass_diagonal();
    let reduced = reduce_compliance(|r| full_solve(components, &factor, r), &mass, &model.basis);
    let mut best: Option<FollowerResult> = None;
    for seed in seeds.iter().filter(|s| s.len() == model.dim() && model.is_strictly_feasible(s)) {
        let result = newton_ascent(&reduced.matrix, model, seed, options)?;
        if best.as_ref().is_none_or(|b| result.objective > b.objective) {
            best = Some(result);
        }
    }
    let result = best.ok_or(FollowerError::NoSeeds)?;
    let displacement = Displacement { values: reduced.displacement(&result.coefficients) };
    Ok(FollowerSolution { result, reduced, factor, displacement })
}
