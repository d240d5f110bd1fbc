//! Acceptance suite: every criterion below prints one pass/fail line and
//! asserts at its stated tolerance. All problems are the shipped configs
//! under `configs/`, solved at their configured resolutions.

use gbellman::config::{load_config, LoadedProblem};
use gbellman::control::{
    comparison_check, dpp_residual, max_holder_quotient, max_lipschitz_quotient, solve_value,
    ValueSurface,
};
use gbellman::grid::{GridFunction, SpaceGrid, TimeGrid};
use gbellman::hjb::{
    freezing_check, gprime_calibrate, gprime_check, hjb_solve, HamiltonianContext,
};
use gbellman::lattice::one_step_expectation;
use gbellman::problem::SmoothTestFunction;
use gbellman::Quadrature;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use std::path::PathBuf;
use std::time::Instant;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn load(name: &str) -> LoadedProblem {
    load_config(&config_path(name)).expect("shipped config must load")
}

fn solve_lattice(loaded: &LoadedProblem) -> ValueSurface {
    solve_value(
        &loaded.problem,
        &loaded.generator,
        &loaded.quadrature,
        &loaded.tgrid,
        &loaded.sgrid,
        loaded.picard_iters,
    )
    .expect("value iteration")
}

fn solve_pde(loaded: &LoadedProblem) -> ValueSurface {
    let ctx = HamiltonianContext::new(&loaded.problem, &loaded.generator);
    hjb_solve(&ctx, &loaded.tgrid, &loaded.sgrid).expect("pde sweep")
}

fn origin(loaded: &LoadedProblem) -> DVector<f64> {
    DVector::zeros(loaded.sgrid.dim())
}

fn report(criterion: &str, passed: bool, detail: String) {
    println!(
        "criterion {criterion}: {} - {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion} failed: {detail}");
}

fn interior_gap(a: &ValueSurface, b: &ValueSurface) -> f64 {
    let interior = a.space_grid().interior_third();
    let mut gap: f64 = 0.0;
    for level in 0..a.num_levels() {
        for &flat in &interior {
            gap = gap.max((a.value(level, flat) - b.value(level, flat)).abs());
        }
    }
    gap
}

fn oracle_case(criterion: &str, config: &str, expected: f64) {
    let start = Instant::now();
    let loaded = load(config);
    let x0 = origin(&loaded);
    let lattice = solve_lattice(&loaded).initial_value(&x0);
    let pde = solve_pde(&loaded).initial_value(&x0);
    let elapsed = start.elapsed().as_secs_f64();
    let err_lattice = (lattice - expected).abs();
    let err_pde = (pde - expected).abs();
    let passed = err_lattice <= 2e-2 && err_pde <= 2e-2 && elapsed < 10.0;
    report(
        criterion,
        passed,
        format!(
            "value route {lattice:.6}, pde route {pde:.6}, target {expected}, elapsed {elapsed:.2}s"
        ),
    );
}

#[test]
fn criterion_01_gheat_convex_oracle() {
    oracle_case(
        "01 (uncertain-volatility heat, convex)",
        "gheat_convex.json",
        1.0,
    );
}

#[test]
fn criterion_02_gheat_concave_oracle() {
    oracle_case(
        "02 (uncertain-volatility heat, concave)",
        "gheat_concave.json",
        -0.25,
    );
}

#[test]
fn criterion_03_quadratic_variation_identity() {
    // iterated one-step expectation of a*x^2 over [0, 1] estimates the
    // quadratic-variation functional, which equals g~(2a)
    let loaded = load("qv_penalized.json");
    let gen = &loaded.generator;
    let quad = Quadrature::gauss_hermite(1, 3).unwrap();
    let mut all_pass = true;
    let mut lines = Vec::new();
    for a in [1.0f64, -1.0] {
        let expected = gen
            .eval_g_tilde(&DMatrix::from_row_slice(1, 1, &[2.0 * a]))
            .unwrap();
        let mut errors = Vec::new();
        for steps in [32usize, 64] {
            let points = 8 * steps + 1;
            let grid = SpaceGrid::line(-4.0, 4.0, points).unwrap();
            let dt = 1.0 / steps as f64;
            let mut phi = GridFunction::from_fn(grid.clone(), |x| a * x[0] * x[0]).unwrap();
            for _ in 0..steps {
                phi = one_step_expectation(&phi, dt, gen, &quad).unwrap();
            }
            let estimate = phi.value(grid.len() / 2);
            errors.push((estimate - expected).abs());
        }
        let halves = errors[1] <= 0.7 * errors[0];
        let within = errors.iter().all(|e| *e <= 2e-2);
        all_pass &= halves && within;
        lines.push(format!(
            "a={a}: target {expected}, errors {:.3e} -> {:.3e}",
            errors[0], errors[1]
        ));
    }
    report(
        "03 (quadratic-variation identity)",
        all_pass,
        lines.join("; "),
    );
}

#[test]
fn criterion_04_drift_control_oracle() {
    let start = Instant::now();
    let loaded = load("drift_control.json");
    let x0 = origin(&loaded);
    let lattice = solve_lattice(&loaded);
    let pde = solve_pde(&loaded);
    let v_lattice = lattice.initial_value(&x0);
    let v_pde = pde.initial_value(&x0);
    let elapsed = start.elapsed().as_secs_f64();

    // the recorded minimizer on the interior is the leftmost control u = -1
    assert_eq!(loaded.problem.controls()[0][0], -1.0);
    let interior = loaded.sgrid.interior_third();
    let mut argmin_ok = true;
    for level in 0..loaded.tgrid.steps {
        for &flat in &interior {
            argmin_ok &= lattice.argmin(level)[flat] == 0;
        }
    }
    let passed = (v_lattice + 1.0).abs() <= 2e-2
        && (v_pde + 1.0).abs() <= 2e-2
        && argmin_ok
        && elapsed < 10.0;
    report(
        "04 (drift control)",
        passed,
        format!(
            "value route {v_lattice:.6}, pde route {v_pde:.6}, target -1, interior argmin=-1: {argmin_ok}, elapsed {elapsed:.2}s"
        ),
    );
}

#[test]
fn criterion_05_comparison_theorem() {
    let start = Instant::now();
    let mut total_violations = 0usize;
    let mut details = Vec::new();
    for config in [
        "gheat_convex.json",
        "gheat_concave.json",
        "drift_control.json",
        "qv_penalized.json",
    ] {
        let loaded = load(config);
        let outcome = comparison_check(
            &loaded.problem,
            &loaded.generator,
            &loaded.quadrature,
            &loaded.sgrid,
            loaded.tgrid.t0,
            loaded.tgrid.dt(),
            loaded.picard_iters,
            100,
            loaded.seed ^ 0x5,
            1e-10,
        )
        .unwrap();
        total_violations += outcome.violations;
        details.push(format!(
            "{}: {} violations",
            loaded.name, outcome.violations
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let passed = total_violations == 0 && elapsed < 30.0;
    report(
        "05 (comparison theorem)",
        passed,
        format!("{}; elapsed {elapsed:.2}s", details.join(", ")),
    );
}

#[test]
fn criterion_06_dynamic_programming() {
    let start = Instant::now();
    // one-window identity on every shipped problem
    let mut max_one_window: f64 = 0.0;
    for config in [
        "gheat_convex.json",
        "gheat_concave.json",
        "drift_control.json",
        "qv_penalized.json",
    ] {
        let loaded = load(config);
        let surface = solve_lattice(&loaded);
        for level in [0usize, loaded.tgrid.steps / 2] {
            let r = dpp_residual(
                &loaded.problem,
                &loaded.generator,
                &loaded.quadrature,
                &surface,
                level,
                1,
            )
            .unwrap();
            max_one_window = max_one_window.max(r);
        }
    }

    // four-window refinement on the drift problem
    let loaded = load("drift_control.json");
    let mut residuals = Vec::new();
    for steps in [64usize, 128] {
        let tgrid = TimeGrid::new(0.0, 1.0, steps).unwrap();
        let surface = solve_value(
            &loaded.problem,
            &loaded.generator,
            &loaded.quadrature,
            &tgrid,
            &loaded.sgrid,
            loaded.picard_iters,
        )
        .unwrap();
        residuals.push(
            dpp_residual(
                &loaded.problem,
                &loaded.generator,
                &loaded.quadrature,
                &surface,
                0,
                4,
            )
            .unwrap(),
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    let passed = max_one_window <= 1e-12 && residuals[1] <= 0.7 * residuals[0] && elapsed < 60.0;
    report(
        "06 (dynamic programming principle)",
        passed,
        format!(
            "one-window max {max_one_window:.2e}; four-window {:.2e} (coarse) -> {:.2e} (fine); elapsed {elapsed:.2}s",
            residuals[0], residuals[1]
        ),
    );
}

#[test]
fn criterion_07_freezing_rate() {
    let start = Instant::now();
    let loaded = load("gheat_convex.json");
    let ctx = HamiltonianContext::new(&loaded.problem, &loaded.generator);
    let phi = SmoothTestFunction::parse("x1^2", 1).unwrap();
    let rows = freezing_check(
        &ctx,
        &phi,
        0.0,
        &DVector::from_vec(vec![0.0]),
        &[0.1, 0.05, 0.025],
        loaded.picard_iters,
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let orders: Vec<f64> = rows.iter().filter_map(|r| r.order).collect();
    let passed = orders.iter().all(|o| *o >= 1.4) && elapsed < 60.0;
    let table = rows
        .iter()
        .map(|r| format!("e({})={:.2e}", r.delta, r.error))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        "07 (freezing rate)",
        passed,
        format!("{table}; orders {orders:?}; elapsed {elapsed:.2}s"),
    );
}

#[test]
fn criterion_08_cross_solver_agreement() {
    let mut all_pass = true;
    let mut details = Vec::new();
    for config in [
        "gheat_convex.json",
        "gheat_concave.json",
        "drift_control.json",
    ] {
        let loaded = load(config);
        let base_gap = interior_gap(&solve_lattice(&loaded), &solve_pde(&loaded));

        // refined: half the time step, spacing shrunk by sqrt(2)
        let tfine = TimeGrid::new(
            loaded.tgrid.t0,
            loaded.tgrid.horizon,
            loaded.tgrid.steps * 2,
        )
        .unwrap();
        let counts: Vec<usize> = loaded
            .sgrid
            .axes()
            .iter()
            .map(|a| ((a.count - 1) as f64 * std::f64::consts::SQRT_2).round() as usize + 1)
            .collect();
        let axes = loaded
            .sgrid
            .axes()
            .iter()
            .zip(counts.iter())
            .map(|(a, &c)| gbellman::Axis::new(a.lo, a.hi, c).unwrap())
            .collect();
        let sfine = SpaceGrid::new(axes).unwrap();
        let fine_lattice = solve_value(
            &loaded.problem,
            &loaded.generator,
            &loaded.quadrature,
            &tfine,
            &sfine,
            loaded.picard_iters,
        )
        .unwrap();
        let ctx = HamiltonianContext::new(&loaded.problem, &loaded.generator);
        let fine_pde = hjb_solve(&ctx, &tfine, &sfine).unwrap();
        let fine_gap = interior_gap(&fine_lattice, &fine_pde);

        all_pass &= base_gap <= 5e-2 && fine_gap <= 2.5e-2;
        details.push(format!(
            "{}: gap {base_gap:.2e} -> {fine_gap:.2e}",
            loaded.name
        ));
    }
    report("08 (cross-solver agreement)", all_pass, details.join("; "));
}

#[test]
fn criterion_09_regularity_quotients() {
    let mut all_pass = true;
    let mut details = Vec::new();
    for config in [
        "gheat_convex.json",
        "gheat_concave.json",
        "drift_control.json",
        "qv_penalized.json",
    ] {
        let loaded = load(config);
        let base = solve_lattice(&loaded);
        // one parabolic refinement level: dt/4, h/2
        let tfine = TimeGrid::new(
            loaded.tgrid.t0,
            loaded.tgrid.horizon,
            loaded.tgrid.steps * 4,
        )
        .unwrap();
        let axes = loaded
            .sgrid
            .axes()
            .iter()
            .map(|a| gbellman::Axis::new(a.lo, a.hi, (a.count - 1) * 2 + 1).unwrap())
            .collect();
        let sfine = SpaceGrid::new(axes).unwrap();
        let fine = solve_value(
            &loaded.problem,
            &loaded.generator,
            &loaded.quadrature,
            &tfine,
            &sfine,
            loaded.picard_iters,
        )
        .unwrap();

        let lip = (max_lipschitz_quotient(&base), max_lipschitz_quotient(&fine));
        let hold = (max_holder_quotient(&base), max_holder_quotient(&fine));
        let ok = lip.1 <= 1.1 * lip.0 && hold.1 <= 1.1 * hold.0;
        all_pass &= ok;
        details.push(format!(
            "{}: lipschitz {:.4} -> {:.4}, holder {:.4} -> {:.4}",
            loaded.name, lip.0, lip.1, hold.0, hold.1
        ));
    }
    report("09 (regularity quotients)", all_pass, details.join("; "));
}

#[test]
fn criterion_10_structure_suite() {
    let start = Instant::now();
    let loaded = load("qv_penalized.json");
    let gen = &loaded.generator;
    let mut rng = ChaCha12Rng::seed_from_u64(0xacce97);
    let sym = |rng: &mut ChaCha12Rng, scale: f64| {
        let m = DMatrix::from_fn(1, 1, |_, _| rng.random_range(-scale..scale));
        (&m + m.transpose()) * 0.5
    };
    let psd = |rng: &mut ChaCha12Rng, scale: f64| {
        let m = DMatrix::from_fn(1, 1, |_, _| rng.random_range(-scale..scale));
        &m * m.transpose()
    };

    let mut violations = 0usize;
    for _ in 0..200 {
        let a1 = sym(&mut rng, 3.0);
        let a2 = sym(&mut rng, 3.0);
        if gen.domination_margin(&a1, &a2).unwrap() < -1e-12 {
            violations += 1;
        }
        let b2 = sym(&mut rng, 3.0);
        let b1 = &b2 + psd(&mut rng, 1.5);
        if gen.eval_g_tilde(&b1).unwrap() < gen.eval_g_tilde(&b2).unwrap() - 1e-12 {
            violations += 1;
        }
        let c2 = sym(&mut rng, 3.0);
        let c1 = &c2 + psd(&mut rng, 2.0);
        if gen.ellipticity_check(&c1, &c2).unwrap() < -1e-12 {
            violations += 1;
        }
    }

    // Hamiltonian structure on the convex heat problem
    let heat = load("gheat_convex.json");
    let ctx = HamiltonianContext::new(&heat.problem, &heat.generator);
    for _ in 0..200 {
        let b_mat = sym(&mut rng, 2.0);
        let a_mat = &b_mat + psd(&mut rng, 1.5);
        let x = [rng.random_range(-3.0..3.0)];
        let p = DVector::from_vec(vec![rng.random_range(-2.0..2.0)]);
        let v = rng.random_range(-2.0..2.0);
        let u = heat.problem.controls()[0].clone();
        let ha = ctx
            .hamiltonian(0.4, &x, v, &p, &a_mat, u.as_slice())
            .unwrap();
        let hb = ctx
            .hamiltonian(0.4, &x, v, &p, &b_mat, u.as_slice())
            .unwrap();
        if ha < hb - 1e-12 {
            violations += 1;
        }
    }
    for _ in 0..100 {
        let a_mat = sym(&mut rng, 2.0);
        let x = [rng.random_range(-3.0..3.0)];
        let p = DVector::from_vec(vec![rng.random_range(-2.0..2.0)]);
        let f = ctx.f_matrix(0.4, &x, 0.0, &p, &a_mat, &[0.0]).unwrap();
        if (&f - f.transpose()).abs().max() > 1e-12 {
            violations += 1;
        }
    }
    let state_box = [(-4.0, 4.0)];
    let constant = gprime_calibrate(&ctx, 100, &state_box, (0.0, 1.0), 0xca11).unwrap();
    let gp = gprime_check(&ctx, 100, constant, &state_box, (0.0, 1.0), 0xca12).unwrap();
    violations += gp.violations;

    let elapsed = start.elapsed().as_secs_f64();
    let passed = violations == 0 && elapsed < 10.0;
    report(
        "10 (structure suite)",
        passed,
        format!("violations {violations}, gprime constant {constant:.2}, elapsed {elapsed:.2}s"),
    );
}
