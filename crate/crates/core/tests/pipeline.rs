use nalgebra::DVector;
use shellopt::elastic::{energy_gradient, free_energy};
use shellopt::follower::{build_force_basis, smoothed_value, solve_follower, ForceModel, NewtonOptions};
use shellopt::leader::{evaluate_sample, sgd, tracking_cost, HypergradientMode, LeaderConfig, LeaderProblem, NoiseModel};
use shellopt::{shapes, DirichletSelector, ElasticComponents, ElasticParams, ShellMesh};

fn patch() -> (ShellMesh, ElasticComponents, ForceModel) {
    let mesh = shapes::bumpy_patch(4, 0.3)
        .build_topology()
        .unwrap()
        .select_dirichlet(&DirichletSelector::Indices(vec![0, 1, 5]))
        .unwrap();
    let q = mesh.reference_quantities().unwrap();
    let comps = ElasticComponents::assemble(&mesh, &q, ElasticParams::default()).unwrap();
    let model = ForceModel::cylinder(build_force_basis(&mesh, &mesh.vertex_normals().unwrap()), 0.02, 0.04, 1e-4);
    (mesh, comps, model)
}

#[test]
fn linear_state_is_first_order_accurate() {
    let (mesh, comps, model) = patch();
    let q = mesh.reference_quantities().unwrap();
    let u = vec![0.1; mesh.faces.len()];
    let factor = comps.factorize(&u).unwrap();
    let mass = comps.mass_diagonal();
    // relative residual of the nonlinear equilibrium at the linear state
    let relative_residual = |scale: f64| {
        let f = model.force(&DVector::from_vec(vec![0.01 * scale, -0.005 * scale, 0.02 * scale]));
        let y = comps.solve_state(&factor, &f).values;
        let grad = energy_gradient(&mesh, &q, &u, &y, comps.params()).unwrap();
        let free = (0..y.len()).filter(|&i| comps.free_dof(i).is_some());
        let residual = free.map(|i| (grad[i] - mass[i] * f[i]).abs()).fold(0.0, f64::max);
        let load = (0..y.len()).map(|i| (mass[i] * f[i]).abs()).fold(0.0, f64::max);
        let e0 = free_energy(&mesh, &q, &u, &f, &vec![0.0; y.len()], comps.params()).unwrap();
        let e1 = free_energy(&mesh, &q, &u, &f, &y, comps.params()).unwrap();
        assert!(e1 < e0);
        residual / load
    };
    let (coarse, fine) = (relative_residual(0.1), relative_residual(0.01));
    assert!(fine < 0.2 * coarse, "{coarse:e} -> {fine:e}");
}

#[test]
fn follower_beats_every_feasible_probe() {
    let (mesh, comps, model) = patch();
    let u = vec![0.08; mesh.faces.len()];
    let sol = solve_follower(&comps, &u, &model, &model.default_seeds(), &NewtonOptions::default()).unwrap();
    assert!(sol.result.converged);
    let s = &sol.reduced.matrix;
    let best = sol.result.objective;
    for i in 0..=20 {
        for j in 0..=20 {
            let angle = std::f64::consts::TAU * i as f64 / 21.0;
            let r = 0.02 * (0.05 + 0.9 * j as f64 / 20.0);
            let probe = DVector::from_vec(vec![r * angle.cos(), r * angle.sin(), 0.04 * (0.05 + 0.9 * j as f64 / 20.0)]);
            assert!(smoothed_value(&probe, s, &model).unwrap() <= best + 1e-12 * best.abs());
        }
    }
}

#[test]
fn tracking_cost_agrees_with_sample_evaluation() {
    let (mesh, comps, model) = patch();
    let problem = LeaderProblem { components: &comps, model: &model, tracking: vec![true; mesh.positions.len()], follower: NewtonOptions::default() };
    let u = vec![0.07; mesh.faces.len()];
    let ones = vec![1.0; mesh.faces.len()];
    let out = evaluate_sample(&problem, &u, ones, None, Some(HypergradientMode::Full)).unwrap();
    let direct = tracking_cost(&comps, &u, model.force(&out.coefficients).as_slice(), &problem.tracking).unwrap();
    assert!((direct - out.cost).abs() <= 1e-10 * out.cost);
    assert_eq!(out.gradient.len(), mesh.faces.len());
}

#[test]
fn thicker_shell_has_smaller_worst_case_cost() {
    let (mesh, comps, model) = patch();
    let problem = LeaderProblem { components: &comps, model: &model, tracking: vec![true; mesh.positions.len()], follower: NewtonOptions::default() };
    let ones = vec![1.0; mesh.faces.len()];
    let thin = evaluate_sample(&problem, &vec![0.03; mesh.faces.len()], ones.clone(), None, None).unwrap();
    let thick = evaluate_sample(&problem, &vec![0.12; mesh.faces.len()], ones, None, None).unwrap();
    assert!(thick.cost < thin.cost);
}

#[test]
fn short_sgd_run_stays_feasible_and_reports_every_iterate() {
    let (mesh, comps, model) = patch();
    let problem = LeaderProblem { components: &comps, model: &model, tracking: vec![true; mesh.positions.len()], follower: NewtonOptions::default() };
    let config = LeaderConfig { iterations: 8, samples: 6, volume_max: 0.2, ..Default::default() };
    let noise = NoiseModel { sigma: 0.1, seed: 3, ..Default::default() };
    let u0 = config.initial_thickness(comps.face_areas());
    let mut seen = Vec::new();
    let traj = sgd(&problem, &noise, &config, &u0, |rec, u| {
        assert!(u.iter().all(|&x| x >= config.lower && x <= config.upper));
        seen.push(rec.iteration);
    })
    .unwrap();
    assert_eq!(seen, (0..=8).collect::<Vec<_>>());
    assert_eq!(traj.records.len(), 9);
    assert!(traj.records.iter().all(|r| r.volume <= config.volume_max));
    assert_eq!(traj.records[0].relative_cost, 1.0);
}
