//! Acceptance criteria 1 to 9. Runs as a plain binary so that every
//! criterion prints exactly one PASS/FAIL line; the process fails when any
//! hard criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shellopt::bilevel::{toy_linf_gap, ToyInstance, DEFAULT_REL_TOL};
use shellopt::elastic::{energy_gradient, volume};
use shellopt::follower::{build_force_basis, newton_ascent, reduce_compliance, full_solve, solve_follower, Constraint, ForceModel, NewtonOptions};
use shellopt::leader::{evaluate_sample, sgd, HypergradientMode, IterationRecord, LeaderConfig, LeaderProblem, NoiseModel, TrackingSelector};
use shellopt::risk::{cvar, expectation, expected_excess, mean_upper_semideviation};
use shellopt::shapes::{self, RoofShape};
use shellopt::{DirichletSelector, ElasticComponents, ElasticParams, ShellMesh};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn shell(mesh: ShellMesh, selector: &DirichletSelector) -> (ShellMesh, ElasticComponents) {
    let mesh = mesh.build_topology().unwrap().select_dirichlet(selector).unwrap();
    let q = mesh.reference_quantities().unwrap();
    let comps = ElasticComponents::assemble(&mesh, &q, ElasticParams::default()).unwrap();
    (mesh, comps)
}

fn roof_shell(resolution: usize) -> (ShellMesh, ElasticComponents, ForceModel) {
    let (mesh, comps) = shell(shapes::roof(&RoofShape { resolution, ..Default::default() }), &DirichletSelector::ZThreshold(1e-9));
    let basis = build_force_basis(&mesh, &mesh.vertex_normals().unwrap());
    let model = ForceModel::cylinder(basis, 0.0015, 0.003, 1e-4);
    (mesh, comps, model)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let closed = ToyInstance::lower_level();
    let dense = ToyInstance::dense_lower_level();
    let mut ok = true;
    for i in 0..=100 {
        let u = 0.5 + i as f64 / 100.0;
        let expected = 2.0 + 2.0 * (u - 1.0).abs();
        ok &= close(closed.psi(&[u]).unwrap(), expected, 1e-12);
        ok &= close(dense.psi(&[u]).unwrap(), expected, 1e-12);
        ok &= close(ToyInstance::psi_closed(u), expected, 1e-12);
    }
    let set = |lower: &dyn Fn(f64) -> Vec<Vec<f64>>, u: f64| {
        let mut s = lower(u);
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s
    };
    let closed_set = |u: f64| closed.big_psi(&[u], DEFAULT_REL_TOL).unwrap();
    let dense_set = |u: f64| dense.big_psi(&[u], DEFAULT_REL_TOL).unwrap();
    for lower in [&closed_set as &dyn Fn(f64) -> Vec<Vec<f64>>, &dense_set] {
        ok &= set(lower, 1.5) == vec![vec![1.0, 1.0]];
        ok &= set(lower, 0.5) == vec![vec![-1.0, 1.0]];
        ok &= set(lower, 1.0) == vec![vec![-1.0, 1.0], vec![1.0, 1.0]];
    }
    for (u, phi) in [(1.5, 1.5), (0.5, -0.5), (1.0, 1.0)] {
        ok &= close(closed.phi(&[u], DEFAULT_REL_TOL).unwrap(), phi, 1e-12);
        ok &= close(dense.phi(&[u], DEFAULT_REL_TOL).unwrap(), phi, 1e-12);
        ok &= close(ToyInstance::phi_closed(u), phi, 1e-12);
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(1);
    outcome(ok, format!("closed form and enumerator agree on psi, Psi, Phi at 1e-12 in {elapsed:.2?} (limit 1 s)"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [10u32, 100, 1000] {
        let u_k = 1.0 - 1.0 / f64::from(k);
        let gap = toy_linf_gap(u_k, 10_000).unwrap();
        let bound = 1.0 + 1.0 / u_k;
        let linf_ok = gap.linf >= bound - 2e-2;
        ok &= linf_ok;
        let mut part = format!("k={k}: Linf {:.5} vs bound {:.5} {}", gap.linf, bound, if linf_ok { "ok" } else { "SHORT" });
        if k == 1000 {
            ok &= gap.l1 < 0.05;
            part += &format!(", L1 {:.5} (limit 0.05)", gap.l1);
        }
        parts.push(part);
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(5);
    let mut detail = format!("{} in {elapsed:.2?}", parts.join("; "));
    if !ok {
        detail += "; for k=10 the sampled v stop at 11/10 < 1/u_k, so the supremum is 1.9 * 1.1 = 2.09";
    }
    outcome(ok, detail)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let (mesh, comps) = shell(shapes::bumpy_patch(6, 0.3), &DirichletSelector::Indices(vec![0, 1, 2, 7]));
    let refq = mesh.reference_quantities().unwrap();
    let params = ElasticParams::default();
    let n = 3 * mesh.positions.len();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u: Vec<f64> = (0..mesh.faces.len()).map(|_| rng.random_range(0.03..0.15)).collect();
    let zero = vec![0.0; n];
    let g0 = energy_gradient(&mesh, &refq, &u, &zero, &params).unwrap();
    let residual = g0.iter().fold(0.0f64, |m, g| m.max(g.abs()));

    let h_assembled = comps.stiffness(&u).unwrap().to_dense();
    let nf = comps.n_free();
    let mut h_fd = DMatrix::zeros(nf, nf);
    let step = 1e-5;
    for j in 0..n {
        let Some(cj) = comps.free_dof(j) else { continue };
        let mut yp = zero.clone();
        yp[j] = step;
        let mut ym = zero.clone();
        ym[j] = -step;
        let gp = energy_gradient(&mesh, &refq, &u, &yp, &params).unwrap();
        let gm = energy_gradient(&mesh, &refq, &u, &ym, &params).unwrap();
        for i in 0..n {
            if let Some(ci) = comps.free_dof(i) {
                h_fd[(ci, cj)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
    }
    let rel_frob = (&h_fd - &h_assembled).norm() / h_assembled.norm();

    let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let factor = comps.factorize(&u).unwrap();
    let y = comps.solve_state(&factor, &f).values;
    let m = comps.mass_diagonal();
    let fmy: f64 = (0..n).map(|i| f[i] * m[i] * y[i]).sum();
    let yr = comps.reduce(&y);
    let yhy = comps.stiffness(&u).unwrap().bilinear(&yr, &yr);
    let compliance_rel = (fmy - yhy).abs() / yhy.abs();

    let elapsed = start.elapsed();
    let ok = nf <= 200 && rel_frob < 1e-4 && residual < 1e-10 && compliance_rel < 1e-8 && elapsed < Duration::from_secs(30);
    outcome(
        ok,
        format!(
            "{nf} free DOFs: Hessian rel Frobenius {rel_frob:.2e} (< 1e-4), rest residual {residual:.2e} (< 1e-10), compliance identity {compliance_rel:.2e} (< 1e-8), {elapsed:.2?} (limit 30 s)"
        ),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let (mesh, comps) = shell(shapes::bumpy_patch(5, 0.4), &DirichletSelector::Indices(vec![0, 1, 2, 6, 7]));
    let basis = build_force_basis(&mesh, &mesh.vertex_normals().unwrap());
    let model = ForceModel::cylinder(basis, 0.02, 0.04, 1e-4);
    let follower = NewtonOptions { grad_tol: 0.0, ..Default::default() };
    let problem = LeaderProblem { components: &comps, model: &model, tracking: vec![true; mesh.positions.len()], follower };
    let warm_opts = NewtonOptions { continuation: false, ..follower };
    let sample_map = |u: &[f64], ups: &[f64], warm: &DVector<f64>| {
        let ut: Vec<f64> = u.iter().zip(ups).map(|(a, b)| a * b).collect();
        let s = solve_follower(&comps, &ut, &model, std::slice::from_ref(warm), &warm_opts).unwrap();
        let w = problem.weights();
        s.displacement.values.iter().zip(&w).map(|(y, w)| w * y * y).sum::<f64>()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = NoiseModel { sigma: 0.15, seed: 21, ..Default::default() };
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for draw in 0..5u64 {
        let u: Vec<f64> = (0..mesh.faces.len()).map(|_| rng.random_range(0.04..0.16)).collect();
        let ups = noise.sample_perturbation(draw, draw, comps.frozen());
        let out = evaluate_sample(&problem, &u, ups.clone(), None, Some(HypergradientMode::Full)).unwrap();
        for t in (0..u.len()).filter(|&t| !comps.frozen()[t]) {
            if out.gradient[t].abs() <= 1e-8 {
                continue;
            }
            let h = 1e-6 * u[t];
            let (mut up, mut um) = (u.clone(), u.clone());
            up[t] += h;
            um[t] -= h;
            let fd = (sample_map(&up, &ups, &out.coefficients) - sample_map(&um, &ups, &out.coefficients)) / (2.0 * h);
            worst = worst.max((fd - out.gradient[t]).abs() / out.gradient[t].abs());
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    let ok = mesh.faces.len() <= 100 && worst < 1e-3 && checked > 0 && elapsed < Duration::from_secs(120);
    outcome(ok, format!("{} faces, 5 draws, {checked} components: worst rel error {worst:.2e} (< 1e-3), {elapsed:.2?} (limit 2 min)", mesh.faces.len()))
}

fn monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0])
}

fn criterion_5() -> Outcome {
    let mut all_monotone = true;
    let mut instances = 0;
    let mut check = |s: &DMatrix<f64>, model: &ForceModel, seeds: &[DVector<f64>]| {
        for seed in seeds {
            let r = newton_ascent(s, model, seed, &NewtonOptions::default()).unwrap();
            all_monotone &= monotone(&r.trace) && r.stages.iter().all(|st| monotone(&st.trace));
            instances += 1;
        }
    };
    // identity compliance in the unit cylinder
    let unit = ForceModel::cylinder(DMatrix::identity(3, 3), 1.0, 1.0, 1e-4);
    check(&DMatrix::identity(3, 3), &unit, &unit.default_seeds());
    // the toy box
    let toy = ForceModel {
        basis: DMatrix::identity(2, 2),
        constraints: vec![
            Constraint::Lower { index: 0, bound: -1.0 },
            Constraint::Upper { index: 0, bound: 1.0 },
            Constraint::Lower { index: 1, bound: 0.0 },
            Constraint::Upper { index: 1, bound: 1.0 },
        ],
        alpha: 1e-6,
        cylinder: None,
    };
    for u in [0.6, 1.0, 1.4] {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, u - 1.0, u - 1.0, 1.0]);
        check(&s, &toy, &[DVector::from_row_slice(&[0.2, 0.5]), DVector::from_row_slice(&[-0.7, 0.1])]);
    }
    // patches and the roof
    let (patch, pcomps) = shell(shapes::bumpy_patch(4, 0.3), &DirichletSelector::Indices(vec![0, 1, 5]));
    let pmodel = ForceModel::cylinder(build_force_basis(&patch, &patch.vertex_normals().unwrap()), 0.02, 0.04, 1e-4);
    for u in [0.03, 0.08, 0.15] {
        let factor = pcomps.factorize(&vec![u; patch.faces.len()]).unwrap();
        let red = reduce_compliance(|r| full_solve(&pcomps, &factor, r), &pcomps.mass_diagonal(), &pmodel.basis);
        check(&red.matrix, &pmodel, &pmodel.default_seeds());
    }
    let (roof, comps, model) = roof_shell(16);
    let u = LeaderConfig::default().initial_thickness(comps.face_areas());
    let factor = comps.factorize(&u).unwrap();
    let red = reduce_compliance(|r| full_solve(&comps, &factor, r), &comps.mass_diagonal(), &model.basis);
    check(&red.matrix, &model, &model.default_seeds());

    let sol = solve_follower(&comps, &u, &model, &model.default_seeds(), &NewtonOptions::default()).unwrap();
    let f = &sol.result.coefficients;
    let q1 = 0.0015f64.powi(2) - f[0] * f[0] - f[1] * f[1];
    let rim = q1 < 0.05 * 0.0015f64.powi(2);
    let vertical = (f[2] - 0.003).abs() <= 0.05 * 0.003;
    let ok = all_monotone && rim && vertical && sol.result.converged;
    outcome(
        ok,
        format!(
            "{instances} ascents monotone: {all_monotone}; roof {} faces: Q1/Fxy^2 = {:.2e} (< 0.05), F3/Fz = {:.5} (within 5%), {} Newton iterations (logged only)",
            roof.faces.len(),
            q1 / 0.0015f64.powi(2),
            f[2] / 0.003,
            sol.result.iterations
        ),
    )
}

fn feasible_exactly(u: &[f64], frozen: &[bool], areas: &[f64], c: &LeaderConfig) -> bool {
    u.iter().zip(frozen).all(|(&x, &fz)| fz || (x >= c.lower && x <= c.upper)) && volume(u, areas) <= c.volume_max
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let (mesh, comps, model) = roof_shell(12);
    let chi = TrackingSelector::Full.indicator(&mesh).unwrap();
    let problem = LeaderProblem { components: &comps, model: &model, tracking: chi, follower: NewtonOptions::default() };
    let config = LeaderConfig { iterations: 200, ..Default::default() };
    let noise = NoiseModel { sigma: 0.1, seed: 1, ..Default::default() };
    let u0 = config.initial_thickness(comps.face_areas());
    let mut feasible = true;
    let traj = sgd(&problem, &noise, &config, &u0, |_, u| {
        feasible &= feasible_exactly(u, comps.frozen(), comps.face_areas(), &config);
    })
    .unwrap();
    feasible &= feasible_exactly(&traj.thickness, comps.frozen(), comps.face_areas(), &config);
    let rel: Vec<f64> = traj.records.iter().map(|r| r.relative_cost).collect();
    let tail = &rel[rel.len() - 50..];
    let ma = tail.iter().sum::<f64>() / tail.len() as f64;
    let ok = feasible && ma < 1.0 && traj.records.len() == 201;
    outcome(
        ok,
        format!(
            "roof {} vertices / {} faces, K = {}, 200 iterations: 50-iteration mean of J/J0 = {ma:.4} (< 1), all iterates feasible: {feasible}, {:.1?}",
            mesh.positions.len(),
            mesh.faces.len(),
            config.samples,
            start.elapsed()
        ),
    )
}

/// Composite Simpson moments `∫ x^p φ(x) dx / ∫ φ(x) dx` over `[a, b]`.
fn tn_moments(sigma: f64, a: f64, b: f64) -> [f64; 5] {
    let n = 200_000;
    let h = (b - a) / n as f64;
    let mut m = [0.0; 5];
    for i in 0..=n {
        let x = a + i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let density = (-0.5 * ((x - 1.0) / sigma).powi(2)).exp();
        for (p, mp) in m.iter_mut().enumerate() {
            *mp += w * density * x.powi(p as i32);
        }
    }
    let z = m[0];
    m.map(|v| v / z)
}

fn records_without_time(records: &[IterationRecord]) -> Vec<[u64; 9]> {
    records
        .iter()
        .map(|r| {
            [
                r.iteration as u64,
                r.empirical_risk.to_bits(),
                r.relative_cost.to_bits(),
                r.barrier.to_bits(),
                r.volume.to_bits(),
                r.step_size.to_bits(),
                r.standard_error.to_bits(),
                r.mean_newton_iterations.to_bits(),
                r.singular_samples as u64,
            ]
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (sigma, lower, upper) in [(0.1, 0.01, 2.0), (0.5, 0.3, 1.4)] {
        let noise = NoiseModel { sigma, lower, upper, seed: 99 };
        let n = 1_000_000;
        let mut rng = noise.rng(0, 0);
        let draws: Vec<f64> = (0..n).map(|_| noise.draw(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let m = tn_moments(sigma, lower, upper);
        let mu = m[1];
        let var_q = m[2] - mu * mu;
        let mu4 = m[4] - 4.0 * mu * m[3] + 6.0 * mu * mu * m[2] - 3.0 * mu.powi(4);
        let se_mean = (var_q / n as f64).sqrt();
        let se_var = ((mu4 - var_q * var_q) / n as f64).sqrt();
        let z_mean = (mean - mu) / se_mean;
        let z_var = (var - var_q) / se_var;
        ok &= z_mean.abs() < 3.0 && z_var.abs() < 3.0;
        parts.push(format!("sigma {sigma}: z(mean) {z_mean:+.2}, z(var) {z_var:+.2}"));
    }

    let (mesh, comps) = shell(shapes::bumpy_patch(4, 0.3), &DirichletSelector::Indices(vec![0, 1, 5]));
    let model = ForceModel::cylinder(build_force_basis(&mesh, &mesh.vertex_normals().unwrap()), 0.02, 0.04, 1e-4);
    let problem = LeaderProblem { components: &comps, model: &model, tracking: vec![true; mesh.positions.len()], follower: NewtonOptions::default() };
    let config = LeaderConfig { iterations: 15, samples: 12, volume_max: 0.2, ..Default::default() };
    let noise = NoiseModel { sigma: 0.2, seed: 5, ..Default::default() };
    let u0 = config.initial_thickness(comps.face_areas());
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| sgd(&problem, &noise, &config, &u0, |_, _| {}).unwrap())
    };
    let reference = run(1);
    let mut identical = true;
    for threads in [1, 2, 4] {
        let t = run(threads);
        identical &= records_without_time(&t.records) == records_without_time(&reference.records)
            && t.thickness.iter().map(|x| x.to_bits()).eq(reference.thickness.iter().map(|x| x.to_bits()));
    }
    ok &= identical;
    parts.push(format!("trajectories bitwise identical for 1, 2, 4 workers: {identical}"));
    outcome(ok, parts.join("; "))
}

fn risk_vector() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, 1..40)
}

fn criterion_8() -> Outcome {
    type Measure = Box<dyn Fn(&[f64]) -> f64>;
    let measures: Vec<(&str, Measure, bool)> = vec![
        ("expectation", Box::new(|y| expectation(y).unwrap()), true),
        ("cvar(0.5)", Box::new(|y| cvar(y, 0.5).unwrap()), true),
        ("cvar(0.9)", Box::new(|y| cvar(y, 0.9).unwrap()), true),
        ("excess(0, 2)", Box::new(|y| expected_excess(y, 0.0, 2.0).unwrap()), false),
        ("semideviation(1)", Box::new(|y| mean_upper_semideviation(y, 1.0).unwrap()), false),
        ("semideviation(2)", Box::new(|y| mean_upper_semideviation(y, 2.0).unwrap()), false),
    ];
    let config = Config { cases: 100, failure_persistence: None, ..Config::default() };
    let tol = |a: f64, b: f64| 1e-9 * (1.0 + a.abs() + b.abs());
    let mut failures = Vec::new();
    for (name, rho, translation) in &measures {
        let mut runner = TestRunner::new_with_rng(config.clone(), proptest::test_runner::TestRng::deterministic_rng(config.rng_algorithm));
        let result = runner.run(&(risk_vector(), prop::collection::vec(0.0..10.0f64, 40), -50.0..50.0f64, 0usize..40), |(y, bump, m, rot)| {
            // monotonicity
            let z: Vec<f64> = y.iter().zip(&bump).map(|(a, b)| a + b).collect();
            prop_assert!(rho(&y) <= rho(&z) + tol(rho(&y), rho(&z)));
            // permutation invariance
            let mut p = y.clone();
            p.rotate_left(rot % y.len());
            p.reverse();
            prop_assert_eq!(rho(&y), rho(&p));
            // translation equivariance
            if *translation {
                let t: Vec<f64> = y.iter().map(|v| v + m).collect();
                prop_assert!((rho(&t) - rho(&y) - m).abs() <= tol(rho(&t), rho(&y)));
            }
            Ok(())
        });
        if let Err(e) = result {
            failures.push(format!("{name}: {e}"));
        }
        let mut runner = TestRunner::new_with_rng(config.clone(), proptest::test_runner::TestRng::deterministic_rng(config.rng_algorithm));
        let result = runner.run(&(prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 1..40)), |pairs| {
            let (y1, y2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            for lambda in [0.25, 0.5, 0.75] {
                let mix: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
                let rhs = lambda * rho(&y1) + (1.0 - lambda) * rho(&y2);
                prop_assert!(rho(&mix) <= rhs + tol(rho(&mix), rhs));
            }
            Ok(())
        });
        if let Err(e) = result {
            failures.push(format!("{name} convexity: {e}"));
        }
    }
    let mut runner = TestRunner::new_with_rng(config.clone(), proptest::test_runner::TestRng::deterministic_rng(config.rng_algorithm));
    if let Err(e) = runner.run(&risk_vector(), |y| {
        prop_assert_eq!(cvar(&y, 0.0).unwrap(), expectation(&y).unwrap());
        Ok(())
    }) {
        failures.push(format!("cvar(0) = expectation: {e}"));
    }
    let ok = failures.is_empty();
    let detail = if ok {
        format!("{} measures x 100 vectors: monotone, permutation invariant, convex; translation equivariant (expectation, CVaR); CVaR(0) == expectation", measures.len())
    } else {
        failures.join("; ")
    };
    outcome(ok, detail)
}

fn spatial_variance(u: &[f64], frozen: &[bool]) -> f64 {
    let free: Vec<f64> = u.iter().zip(frozen).filter(|(_, &f)| !f).map(|(&x, _)| x).collect();
    let mean = free.iter().sum::<f64>() / free.len() as f64;
    free.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / free.len() as f64
}

/// Returns the hard outcome and the soft diffusion statement.
fn criterion_9() -> (Outcome, String) {
    let (mesh, comps, model) = roof_shell(10);
    let chi = TrackingSelector::Full.indicator(&mesh).unwrap();
    let problem = LeaderProblem { components: &comps, model: &model, tracking: chi, follower: NewtonOptions::default() };
    let config = LeaderConfig { iterations: 200, samples: 16, ..Default::default() };
    let u0 = config.initial_thickness(comps.face_areas());
    let sigmas = [0.05, 0.1, 0.2];
    let mut hard = true;
    let mut diffuse_runs = 0;
    let mut rows = Vec::new();
    for seed in 1..=3u64 {
        let mut variances = Vec::new();
        for &sigma in &sigmas {
            let noise = NoiseModel { sigma, seed, ..Default::default() };
            let traj = sgd(&problem, &noise, &config, &u0, |_, _| {}).unwrap();
            let u = &traj.thickness;
            hard &= feasible_exactly(u, comps.frozen(), comps.face_areas(), &config);
            variances.push(spatial_variance(u, comps.frozen()));
        }
        let non_increasing = variances.windows(2).all(|w| w[1] <= w[0]);
        diffuse_runs += usize::from(non_increasing);
        rows.push(format!("seed {seed}: var {:.3e}, {:.3e}, {:.3e}", variances[0], variances[1], variances[2]));
    }
    let soft = format!(
        "spatial variance non-increasing in sigma in {diffuse_runs} of 3 seeded runs ({}); target at least 2 of 3: {}",
        rows.join("; "),
        if diffuse_runs >= 2 { "met" } else { "not met" }
    );
    (outcome(hard, format!("roof {} faces, sigma {sigmas:?}, 3 seeds: final thickness within bounds and volume <= V+ in every run", mesh.faces.len())), soft)
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

fn main() {
    // `cargo test -- --list` and filters from the harness are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: Vec<(u32, &str, Box<dyn FnOnce() -> Outcome>)> = vec![
        (1, "toy example exactness", Box::new(criterion_1)),
        (2, "Linf non-convergence remark", Box::new(criterion_2)),
        (3, "elastic correctness", Box::new(criterion_3)),
        (4, "hypergradient", Box::new(criterion_4)),
        (5, "follower ascent", Box::new(criterion_5)),
        (6, "leader descent", Box::new(criterion_6)),
        (7, "stochastic machinery", Box::new(criterion_7)),
        (8, "risk axioms", Box::new(criterion_8)),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        let o = guarded(run);
        println!("criterion {id} ({name}): {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(id);
        }
    }
    let mut soft = String::new();
    let o = guarded(|| {
        let (o, s) = criterion_9();
        soft = s;
        o
    });
    println!("criterion 9 (material distribution substitutes): {} | {} | soft: {soft}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    if !o.pass {
        failed.push(9);
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
