//! The four subcommands. Each writes its artifacts plus `summary.json`
//! containing the full resolved configuration.

use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use shellopt::bilevel::{toy_linf_gap, ToyInstance, DEFAULT_REL_TOL};
use shellopt::elastic::{check_strictly_feasible, volume};
use shellopt::error::{ElasticError, FollowerError, LeaderError, MeshError};
use shellopt::follower::{build_force_basis, solve_follower, FollowerSolution, ForceModel};
use shellopt::leader::{evaluate_batch, sgd, IterationRecord, LeaderProblem, SampleOutcome};
use shellopt::{risk, shapes, ElasticComponents, ShellMesh};

use crate::config::{MeshSource, RunConfig, ThicknessSource};
use crate::error::CliError;
use crate::output::{read_thickness, Artifacts};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Follower,
    Simulate,
    Toy,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Follower => "follower",
            Command::Simulate => "simulate",
            Command::Toy => "toy",
        }
    }
}

fn mesh_error(e: MeshError) -> CliError {
    match e {
        MeshError::TooFewDirichlet(_) | MeshError::CollinearDirichlet | MeshError::DirichletOutOfRange(_) => {
            CliError::Config(format!("dirichlet selector: {e}"))
        }
        other => CliError::Input(other.to_string()),
    }
}

fn elastic_error(e: ElasticError) -> CliError {
    match e {
        ElasticError::Mesh(m) => mesh_error(m),
        ElasticError::NotPositiveDefinite { .. } => CliError::Config(format!("{e}; the Dirichlet set does not pin the shell")),
        other => CliError::Solver(other.to_string()),
    }
}

fn follower_error(e: FollowerError) -> CliError {
    match e {
        FollowerError::Elastic(inner) => elastic_error(inner),
        other => CliError::Solver(other.to_string()),
    }
}

fn leader_error(e: LeaderError) -> CliError {
    match e {
        LeaderError::Config(m) => CliError::Config(m),
        LeaderError::Elastic(inner) => elastic_error(inner),
        other => CliError::Solver(other.to_string()),
    }
}

/// Mesh, assembled model and tracking set shared by the shell commands.
pub struct Setup {
    pub mesh: ShellMesh,
    pub components: ElasticComponents,
    pub model: ForceModel,
    pub tracking: Vec<bool>,
}

impl Setup {
    pub fn build(config: &RunConfig) -> Result<Self, CliError> {
        let raw = match config.mesh_source()? {
            MeshSource::Obj(path) => ShellMesh::load_obj(path).map_err(mesh_error)?,
            MeshSource::Roof(shape) => {
                if shape.resolution == 0 || !(shape.foot_radius < shape.plateau_radius) {
                    return Err(CliError::Config("roof needs resolution >= 1 and foot_radius < plateau_radius".into()));
                }
                shapes::roof(shape)
            }
        };
        let mesh = raw.build_topology().map_err(mesh_error)?.select_dirichlet(&config.dirichlet).map_err(mesh_error)?;
        let refq = mesh.reference_quantities().map_err(mesh_error)?;
        let components = ElasticComponents::assemble(&mesh, &refq, config.elastic).map_err(elastic_error)?;
        let normals = mesh.vertex_normals().map_err(mesh_error)?;
        let basis = build_force_basis(&mesh, &normals);
        let f = config.force;
        let model = ForceModel::cylinder(basis, f.fmax_xy, f.fmax_z, f.alpha);
        let tracking = config.tracking.indicator(&mesh).map_err(CliError::Config)?;
        log::info!("mesh: {} vertices, {} faces, {} Dirichlet vertices", mesh.positions.len(), mesh.faces.len(), mesh.dirichlet.len());
        Ok(Self { mesh, components, model, tracking })
    }

    fn problem(&self, config: &RunConfig) -> LeaderProblem<'_> {
        LeaderProblem { components: &self.components, model: &self.model, tracking: self.tracking.clone(), follower: config.follower }
    }

    fn summary(&self) -> Value {
        json!({
            "vertices": self.mesh.positions.len(),
            "faces": self.mesh.faces.len(),
            "dirichlet_vertices": self.mesh.dirichlet.len(),
            "frozen_faces": self.mesh.frozen.iter().filter(|&&f| f).count(),
            "free_dofs": self.components.n_free(),
            "total_area": self.components.face_areas().iter().sum::<f64>(),
        })
    }

    /// The configured design, or the uniform start rule.
    pub fn design(&self, config: &RunConfig) -> Result<Vec<f64>, CliError> {
        let faces = self.mesh.faces.len();
        Ok(match &config.thickness {
            None => config.leader.initial_thickness(self.components.face_areas()),
            Some(ThicknessSource::Uniform(v)) => vec![*v; faces],
            Some(ThicknessSource::File(path)) => read_thickness(path, faces)?,
        })
    }
}

fn force_report(model: &ForceModel, solution: &FollowerSolution) -> Value {
    let r = &solution.result;
    let f = r.coefficients.as_slice();
    let norm = r.coefficients.norm();
    let q = model.constraint_values(&r.coefficients);
    let direction: Vec<f64> = if norm > 0.0 { f.iter().map(|x| x / norm).collect() } else { vec![0.0; f.len()] };
    json!({
        "coefficients": f,
        "direction": direction,
        "constraint_values": q,
        "compliance": r.compliance,
        "objective": r.objective,
        "newton_iterations": r.iterations,
        "polish_steps": r.polish_steps,
        "converged": r.converged,
        "gradient_norm": r.gradient_norm,
    })
}

fn summary(command: Command, config: &RunConfig, status: &str, body: Value) -> Value {
    let mut s = json!({
        "command": command.name(),
        "status": status,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
    });
    if let (Value::Object(target), Value::Object(extra)) = (&mut s, body) {
        target.extend(extra);
    }
    s
}

#[derive(Serialize)]
struct ConvergenceRow {
    iteration: usize,
    empirical_risk: f64,
    relative_cost: f64,
    barrier: f64,
    volume: f64,
    step_size: f64,
    wall_ms: f64,
    standard_error: f64,
    mean_newton_iterations: f64,
    singular_samples: usize,
    excluded_samples: usize,
}

impl From<&IterationRecord> for ConvergenceRow {
    fn from(r: &IterationRecord) -> Self {
        Self {
            iteration: r.iteration,
            empirical_risk: r.empirical_risk,
            relative_cost: r.relative_cost,
            barrier: r.barrier,
            volume: r.volume,
            step_size: r.step_size,
            wall_ms: r.wall_ms,
            standard_error: r.standard_error,
            mean_newton_iterations: r.mean_newton_iterations,
            singular_samples: r.singular_samples,
            excluded_samples: r.excluded_samples,
        }
    }
}

/// Mean of the last `window` relative costs.
fn moving_average(records: &[IterationRecord], window: usize) -> f64 {
    let tail = &records[records.len().saturating_sub(window)..];
    tail.iter().map(|r| r.relative_cost).sum::<f64>() / tail.len().max(1) as f64
}

pub fn solve(config: &RunConfig) -> Result<Value, CliError> {
    let started = Instant::now();
    let setup = Setup::build(config)?;
    let comps = &setup.components;
    let u0 = setup.design(config)?;
    let lc = &config.leader;
    check_strictly_feasible(&u0, comps.frozen(), comps.face_areas(), lc.lower, lc.upper, lc.volume_max)
        .map_err(|m| CliError::Config(format!("initial thickness is not strictly feasible: {m}")))?;
    let art = Artifacts::create(&config.output)?;
    art.thickness(&u0)?;
    let mut log = art.csv_log("convergence.csv")?;
    let mut write_error = None;
    let mut last_u = u0.clone();
    let problem = setup.problem(config);
    let outcome = sgd(&problem, &config.noise, lc, &u0, |rec, u| {
        if write_error.is_some() {
            return;
        }
        let mut step = || -> Result<(), CliError> {
            log.row(&ConvergenceRow::from(rec))?;
            if rec.iteration % config.checkpoint_every == 0 {
                art.thickness(u)?;
            }
            Ok(())
        };
        write_error = step().err();
        last_u = u.to_vec();
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    let mesh_info = setup.summary();
    let trajectory = match outcome {
        Ok(t) => t,
        Err(e) => {
            art.thickness(&last_u)?;
            let err = leader_error(e);
            let body = json!({ "mesh": mesh_info, "error": err.to_string(), "exit_code": err.exit_code() });
            art.json("summary.json", &summary(Command::Solve, config, "aborted", body))?;
            return Err(err);
        }
    };
    art.thickness(&trajectory.thickness)?;
    let nominal = solve_follower(comps, &trajectory.thickness, &setup.model, &setup.model.default_seeds(), &config.follower)
        .map_err(follower_error)?;
    art.deformation(&setup.mesh, &nominal.displacement.values)?;
    let records = &trajectory.records;
    let last = records.last().expect("at least one evaluation");
    let body = json!({
        "mesh": mesh_info,
        "initial_thickness": { "rule": config.thickness.is_none(), "mean": u0.iter().sum::<f64>() / u0.len() as f64 },
        "tau0": trajectory.tau0,
        "iterations": records.len() - 1,
        "initial_risk": records[0].empirical_risk,
        "final_risk": last.empirical_risk,
        "final_relative_cost": last.relative_cost,
        "relative_cost_moving_average_50": moving_average(records, 50),
        "final_volume": volume(&trajectory.thickness, comps.face_areas()),
        "thickness_range": [
            trajectory.thickness.iter().copied().fold(f64::INFINITY, f64::min),
            trajectory.thickness.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ],
        "force": force_report(&setup.model, &nominal),
        "wall_seconds": started.elapsed().as_secs_f64(),
    });
    let s = summary(Command::Solve, config, "completed", body);
    art.json("summary.json", &s)?;
    Ok(s)
}

#[derive(Serialize)]
struct TraceRow {
    stage: usize,
    alpha: f64,
    step: usize,
    objective: f64,
}

fn positive_design(u: &[f64]) -> Result<(), CliError> {
    match u.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        Some(t) => Err(CliError::Config(format!("face {t}: thickness {} is not positive", u[t]))),
        None => Ok(()),
    }
}

pub fn follower(config: &RunConfig) -> Result<Value, CliError> {
    let setup = Setup::build(config)?;
    let u = setup.design(config)?;
    positive_design(&u)?;
    let art = Artifacts::create(&config.output)?;
    let solution =
        solve_follower(&setup.components, &u, &setup.model, &setup.model.default_seeds(), &config.follower).map_err(follower_error)?;
    let r = &solution.result;
    let mut rows = Vec::new();
    for (stage, st) in r.stages.iter().enumerate() {
        rows.extend(st.trace.iter().enumerate().map(|(step, &objective)| TraceRow { stage, alpha: st.alpha, step, objective }));
    }
    let stage = r.stages.len();
    rows.extend(r.trace.iter().enumerate().map(|(step, &objective)| TraceRow { stage, alpha: setup.model.alpha, step, objective }));
    art.csv("convergence.csv", rows)?;
    art.thickness(&u)?;
    art.deformation(&setup.mesh, &solution.displacement.values)?;
    let status = if r.converged { "completed" } else { "not_converged" };
    let body = json!({ "mesh": setup.summary(), "force": force_report(&setup.model, &solution) });
    let s = summary(Command::Follower, config, status, body);
    art.json("summary.json", &s)?;
    if !r.converged {
        return Err(CliError::Solver(format!("follower did not converge in {} iterations", r.iterations)));
    }
    Ok(s)
}

#[derive(Serialize)]
struct DistributionRow {
    sample: usize,
    cost: f64,
    compliance: f64,
    f1: f64,
    f2: f64,
    f3: f64,
    newton_iterations: usize,
}

#[derive(Serialize)]
struct MeasureRow {
    measure: &'static str,
    parameter: String,
    value: f64,
}

pub fn simulate(config: &RunConfig) -> Result<Value, CliError> {
    let setup = Setup::build(config)?;
    let u = setup.design(config)?;
    positive_design(&u)?;
    let art = Artifacts::create(&config.output)?;
    let problem = setup.problem(config);
    let lc = &config.leader;
    let batch = evaluate_batch(&problem, &u, &config.noise, 0, lc.samples, &[], None, lc.exclude_failed_samples)
        .map_err(leader_error)?;
    let kept: Vec<(usize, &SampleOutcome)> = batch.outcomes.iter().enumerate().filter_map(|(k, o)| o.as_ref().map(|o| (k, o))).collect();
    art.csv(
        "distribution.csv",
        kept.iter().map(|&(sample, o)| DistributionRow {
            sample,
            cost: o.cost,
            compliance: o.compliance,
            f1: o.coefficients[0],
            f2: o.coefficients[1],
            f3: o.coefficients[2],
            newton_iterations: o.newton_iterations,
        }),
    )?;
    let costs = batch.costs();
    let risk_error = |e: shellopt::RiskError| CliError::Solver(e.to_string());
    let ro = &config.risk;
    let mean = risk::expectation(&costs).map_err(risk_error)?;
    let target = ro.excess_target.unwrap_or(mean);
    let mut measures = vec![MeasureRow { measure: "expectation", parameter: String::new(), value: mean }];
    for &beta in &ro.cvar_levels {
        measures.push(MeasureRow { measure: "cvar", parameter: format!("beta={beta}"), value: risk::cvar(&costs, beta).map_err(risk_error)? });
    }
    measures.push(MeasureRow {
        measure: "expected_excess",
        parameter: format!("target={target};order={}", ro.excess_order),
        value: risk::expected_excess(&costs, target, ro.excess_order).map_err(risk_error)?,
    });
    measures.push(MeasureRow {
        measure: "mean_upper_semideviation",
        parameter: format!("order={}", ro.semideviation_order),
        value: risk::mean_upper_semideviation(&costs, ro.semideviation_order).map_err(risk_error)?,
    });
    let measure_json: Vec<Value> =
        measures.iter().map(|m| json!({ "measure": m.measure, "parameter": m.parameter, "value": m.value })).collect();
    art.csv("risk.csv", measures)?;
    let body = json!({
        "mesh": setup.summary(),
        "samples": lc.samples,
        "excluded_samples": lc.samples - kept.len(),
        "standard_error": batch.standard_error(),
        "measures": measure_json,
    });
    let s = summary(Command::Simulate, config, "completed", body);
    art.json("summary.json", &s)?;
    Ok(s)
}

#[derive(Serialize)]
struct ToyRow {
    u: f64,
    psi: f64,
    phi: f64,
    phi_eta: f64,
}

#[derive(Serialize)]
struct GapRow {
    k: u32,
    u_k: f64,
    linf: f64,
    l1: f64,
    linf_bound: f64,
}

pub fn toy(config: &RunConfig) -> Result<Value, CliError> {
    let t = &config.toy;
    let art = Artifacts::create(&config.output)?;
    let lower = ToyInstance::lower_level();
    let solver = |e: shellopt::BilevelError| CliError::Solver(e.to_string());
    let mut rows = Vec::with_capacity(t.points);
    for i in 0..t.points {
        let u = t.u_min + (t.u_max - t.u_min) * i as f64 / (t.points - 1) as f64;
        rows.push(ToyRow {
            u,
            psi: lower.psi(&[u]).map_err(solver)?,
            phi: lower.phi(&[u], DEFAULT_REL_TOL).map_err(solver)?,
            phi_eta: lower.phi_eta(&[u], t.eta, t.eta_resolution).map_err(solver)?,
        });
    }
    art.csv("toy.csv", rows)?;
    let mut gaps = Vec::new();
    for &k in &t.gap_k {
        let u_k = 1.0 - 1.0 / f64::from(k);
        let g = toy_linf_gap(u_k, t.gap_points).map_err(solver)?;
        gaps.push(GapRow { k, u_k, linf: g.linf, l1: g.l1, linf_bound: 1.0 + 1.0 / u_k });
    }
    let gap_json: Vec<Value> =
        gaps.iter().map(|g| json!({ "k": g.k, "u_k": g.u_k, "linf": g.linf, "l1": g.l1, "linf_bound": g.linf_bound })).collect();
    art.csv("toy_gaps.csv", gaps)?;
    let s = summary(Command::Toy, config, "completed", json!({ "gaps": gap_json }));
    art.json("summary.json", &s)?;
    Ok(s)
}

pub fn run(command: Command, config: &RunConfig) -> Result<Value, CliError> {
    match command {
        Command::Solve => solve(config),
        Command::Follower => follower(config),
        Command::Simulate => simulate(config),
        Command::Toy => toy(config),
    }
}
