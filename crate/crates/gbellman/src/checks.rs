//! The randomized structure suite behind the `validate` command.
//!
//! Each check exercises one contract: domination and monotonicity of the
//! generator pair, moment conditions and monotonicity of the lattice
//! operator, the discrete comparison theorem, the one-step dynamic
//! programming identity, degenerate ellipticity and index symmetry of the
//! Hamiltonian, the doubled-variable comparison structure, and the
//! frozen-coefficient expansion rate. Trial counts and tolerances are fixed
//! here; a report row carries the measured quantities either way.

use crate::config::LoadedProblem;
use crate::control::{comparison_check, dpp_residual, solve_value};
use crate::error::Result;
use crate::generator::Generator;
use crate::grid::{Axis, GridFunction, SpaceGrid};
use crate::hjb::{freezing_check, gprime_calibrate, gprime_check, HamiltonianContext};
use crate::lattice::one_step_expectation;
use crate::problem::SmoothTestFunction;
use crate::quad::Quadrature;
use crate::report::CheckResult;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde_json::json;

fn random_symmetric(rng: &mut ChaCha12Rng, d: usize, scale: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-scale..scale));
    (&m + m.transpose()) * 0.5
}

fn random_psd(rng: &mut ChaCha12Rng, d: usize, scale: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-scale..scale));
    &m * m.transpose()
}

/// Runs the full suite on a loaded problem.
pub fn run_validation_suite(loaded: &LoadedProblem) -> Result<Vec<CheckResult>> {
    let mut checks = Vec::new();
    let seed = loaded.seed;
    checks.extend(generator_checks(&loaded.generator, seed)?);
    checks.extend(lattice_checks(loaded, seed)?);
    checks.extend(control_checks(loaded, seed)?);
    checks.extend(hamiltonian_checks(loaded, seed)?);
    Ok(checks)
}

fn generator_checks(gen: &Generator, seed: u64) -> Result<Vec<CheckResult>> {
    let d = gen.dim();
    let mut out = Vec::new();

    // domination margin over random symmetric pairs
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x01);
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let a1 = random_symmetric(&mut rng, d, 3.0);
        let a2 = random_symmetric(&mut rng, d, 3.0);
        worst = worst.min(gen.domination_margin(&a1, &a2)?);
    }
    out.push(CheckResult::new(
        "generator.domination",
        "domination margin nonnegative over 200 random pairs",
        worst >= -1e-12,
        json!({"trials": 200, "min_margin": worst}),
    ));

    // monotonicity in the semidefinite order
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x02);
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let a2 = random_symmetric(&mut rng, d, 3.0);
        let a1 = &a2 + random_psd(&mut rng, d, 1.5);
        worst = worst.min(gen.eval_g_tilde(&a1)? - gen.eval_g_tilde(&a2)?);
    }
    out.push(CheckResult::new(
        "generator.monotonicity",
        "dominated generator monotone over 200 ordered pairs",
        worst >= -1e-12,
        json!({"trials": 200, "min_increment": worst}),
    ));

    // sublinearity of the envelope
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x03);
    let mut homogeneity: f64 = 0.0;
    let mut subadditivity = f64::INFINITY;
    for _ in 0..200 {
        let a = random_symmetric(&mut rng, d, 3.0);
        let b = random_symmetric(&mut rng, d, 3.0);
        for lambda in [0.0, 0.5, 2.0] {
            homogeneity =
                homogeneity.max((gen.eval_g(&(&a * lambda))? - lambda * gen.eval_g(&a)?).abs());
        }
        subadditivity =
            subadditivity.min(gen.eval_g(&a)? + gen.eval_g(&b)? - gen.eval_g(&(&a + &b))?);
    }
    out.push(CheckResult::new(
        "generator.sublinearity",
        "envelope positively homogeneous and subadditive",
        homogeneity <= 1e-12 && subadditivity >= -1e-12,
        json!({"trials": 200, "max_homogeneity_defect": homogeneity, "min_subadditivity_slack": subadditivity}),
    ));

    // non-degeneracy above the ellipticity floor
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x04);
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let b = random_symmetric(&mut rng, d, 3.0);
        let a = &b + random_psd(&mut rng, d, 2.0);
        worst = worst.min(gen.ellipticity_check(&a, &b)?);
    }
    out.push(CheckResult::new(
        "generator.ellipticity",
        "envelope increments dominate the floor over 200 ordered pairs",
        worst >= -1e-12,
        json!({"trials": 200, "min_slack": worst}),
    ));

    // penalty-free reduction coincides with the envelope exactly
    let twin = Generator::new(
        d,
        gen.sigma_min(),
        gen.atoms()
            .iter()
            .map(|atom| (atom.sigma().clone(), 0.0))
            .collect(),
    )?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x05);
    let mut exact = true;
    for _ in 0..100 {
        let a = random_symmetric(&mut rng, d, 4.0);
        if twin.eval_g_tilde(&a)? != twin.eval_g(&a)? {
            exact = false;
        }
    }
    out.push(CheckResult::new(
        "generator.penalty_free_reduction",
        "zero-penalty family evaluates identically to the envelope",
        exact,
        json!({"trials": 100}),
    ));
    Ok(out)
}

fn lattice_checks(loaded: &LoadedProblem, seed: u64) -> Result<Vec<CheckResult>> {
    let gen = &loaded.generator;
    let d = gen.dim();
    let mut out = Vec::new();

    let moments = loaded.quadrature.validate_moments();
    out.push(CheckResult::new(
        "lattice.moments",
        "quadrature matches moments 0-3 of the standard normal",
        moments.is_ok(),
        json!({"nodes": loaded.quadrature.len()}),
    ));

    // a lattice grid in noise space (the state grid when dimensions agree)
    let lattice_grid = if loaded.sgrid.dim() == d {
        loaded.sgrid.clone()
    } else {
        SpaceGrid::new(vec![Axis::new(-4.0, 4.0, 81)?; d])?
    };
    let dt = loaded.tgrid.dt();

    let constant = GridFunction::from_fn(lattice_grid.clone(), |_| 2.75)?;
    let stepped = one_step_expectation(&constant, dt, gen, &loaded.quadrature)?;
    let drift_defect = stepped
        .values()
        .iter()
        .map(|v| (v - 2.75).abs())
        .fold(0.0, f64::max);
    out.push(CheckResult::new(
        "lattice.constant_preservation",
        "one-step operator maps constants to constants",
        drift_defect <= 1e-12,
        json!({"max_defect": drift_defect}),
    ));

    // monotonicity over 50 random ordered pairs
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x11);
    let mut worst = f64::INFINITY;
    for _ in 0..50 {
        let lower_vals: Vec<f64> = (0..lattice_grid.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let upper_vals: Vec<f64> = lower_vals
            .iter()
            .map(|v| v + rng.random_range(0.0..1.0))
            .collect();
        let lower = one_step_expectation(
            &GridFunction::new(lattice_grid.clone(), lower_vals)?,
            dt,
            gen,
            &loaded.quadrature,
        )?;
        let upper = one_step_expectation(
            &GridFunction::new(lattice_grid.clone(), upper_vals)?,
            dt,
            gen,
            &loaded.quadrature,
        )?;
        for (hi, lo) in upper.values().iter().zip(lower.values().iter()) {
            worst = worst.min(hi - lo);
        }
    }
    out.push(CheckResult::new(
        "lattice.monotonicity",
        "one-step operator monotone over 50 ordered pairs",
        worst >= -1e-12,
        json!({"trials": 50, "min_gap": worst}),
    ));

    // one-step action on a quadratic recovers the generator at rate O(dt)
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x12);
    let a = random_symmetric(&mut rng, d, 2.0);
    let g_tilde = gen.eval_g_tilde(&a)?;
    let gauss = Quadrature::gauss_hermite(d, 3)?;
    let factor_norm = gen
        .atoms()
        .iter()
        .map(|atom| atom.factor().abs().max())
        .fold(0.0, f64::max);
    let mut errors = Vec::new();
    let mut passed = true;
    for dt_probe in [1e-2f64, 5e-3] {
        let spacing = dt_probe / 10.0;
        let radius = 2.5 * dt_probe.sqrt() * factor_norm.max(1.0) + 4.0 * spacing;
        let cells = (radius / spacing).ceil() as usize;
        let axes = vec![
            Axis::new(
                -(cells as f64) * spacing,
                cells as f64 * spacing,
                2 * cells + 1
            )?;
            d
        ];
        let local = SpaceGrid::new(axes)?;
        let phi = GridFunction::from_fn(local.clone(), |x| 0.5 * (&a * x).dot(x))?;
        let stepped = one_step_expectation(&phi, dt_probe, gen, &gauss)?;
        let mid = local.len() / 2;
        let estimate = (stepped.value(mid) - phi.value(mid)) / dt_probe;
        let err = (estimate - g_tilde).abs();
        let tol = dt_probe * (0.02 + 0.02 * a.diagonal().abs().sum());
        if err > tol {
            passed = false;
        }
        errors.push(err);
    }
    out.push(CheckResult::new(
        "lattice.generator_consistency",
        "quadratic payoff gain per unit time matches the generator at O(dt)",
        passed,
        json!({"target": g_tilde, "errors": errors}),
    ));
    Ok(out)
}

fn control_checks(loaded: &LoadedProblem, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let surface = solve_value(
        &loaded.problem,
        &loaded.generator,
        &loaded.quadrature,
        &loaded.tgrid,
        &loaded.sgrid,
        loaded.picard_iters,
    )?;

    // terminal slice is the payoff
    let steps = loaded.tgrid.steps;
    let mut terminal_defect: f64 = 0.0;
    for flat in 0..loaded.sgrid.len() {
        let x = loaded.sgrid.point(flat);
        let phi = loaded.problem.terminal(x.as_slice())?;
        terminal_defect = terminal_defect.max((surface.value(steps, flat) - phi).abs());
    }
    out.push(CheckResult::new(
        "control.terminal_consistency",
        "terminal slice equals the payoff on the grid",
        terminal_defect <= 1e-12,
        json!({"max_defect": terminal_defect}),
    ));

    // discrete comparison over 100 random ordered pairs, all controls
    let report = comparison_check(
        &loaded.problem,
        &loaded.generator,
        &loaded.quadrature,
        &loaded.sgrid,
        loaded.tgrid.t0,
        loaded.tgrid.dt(),
        loaded.picard_iters,
        100,
        seed ^ 0x21,
        1e-10,
    )?;
    out.push(CheckResult::new(
        "control.comparison",
        "one-step comparison holds over 100 ordered pairs and all controls",
        report.violations == 0,
        json!({"trials": report.trials, "violations": report.violations, "min_gap": report.min_gap}),
    ));

    // one-window dynamic programming identity
    let mut worst: f64 = 0.0;
    for level in [0usize, steps / 2] {
        worst = worst.max(dpp_residual(
            &loaded.problem,
            &loaded.generator,
            &loaded.quadrature,
            &surface,
            level,
            1,
        )?);
    }
    out.push(CheckResult::new(
        "control.dpp_one_step",
        "one-window dynamic programming residual vanishes",
        worst <= 1e-12,
        json!({"max_residual": worst}),
    ));
    Ok(out)
}

fn hamiltonian_checks(loaded: &LoadedProblem, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let ctx = HamiltonianContext::new(&loaded.problem, &loaded.generator);
    let n = loaded.problem.state_dim();
    let state_box: Vec<(f64, f64)> = loaded.sgrid.axes().iter().map(|a| (a.lo, a.hi)).collect();
    let time_range = (loaded.tgrid.t0, loaded.tgrid.horizon);

    // degenerate ellipticity in the hessian argument
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x31);
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let b_mat = random_symmetric(&mut rng, n, 2.0);
        let a_mat = &b_mat + random_psd(&mut rng, n, 1.5);
        let x: Vec<f64> = state_box
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..hi))
            .collect();
        let p = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let v = rng.random_range(-2.0..2.0);
        let t = rng.random_range(time_range.0..time_range.1);
        let u = loaded.problem.controls()[0].clone();
        let ha = ctx.hamiltonian(t, &x, v, &p, &a_mat, u.as_slice())?;
        let hb = ctx.hamiltonian(t, &x, v, &p, &b_mat, u.as_slice())?;
        worst = worst.min(ha - hb);
    }
    out.push(CheckResult::new(
        "hjb.degenerate_ellipticity",
        "Hamiltonian monotone in the hessian argument over 200 ordered pairs",
        worst >= -1e-12,
        json!({"trials": 200, "min_increment": worst}),
    ));

    // symmetry of the F matrix
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x32);
    let mut asymmetry: f64 = 0.0;
    for _ in 0..100 {
        let a_mat = random_symmetric(&mut rng, n, 2.0);
        let x: Vec<f64> = state_box
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..hi))
            .collect();
        let p = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let v = rng.random_range(-2.0..2.0);
        let t = rng.random_range(time_range.0..time_range.1);
        for u in loaded.problem.controls() {
            let f = ctx.f_matrix(t, &x, v, &p, &a_mat, u.as_slice())?;
            asymmetry = asymmetry.max((&f - f.transpose()).abs().max());
        }
    }
    out.push(CheckResult::new(
        "hjb.f_symmetry",
        "F matrix symmetric over 100 random inputs",
        asymmetry <= 1e-12,
        json!({"trials": 100, "max_asymmetry": asymmetry}),
    ));

    // doubled-variable comparison structure, constant calibrated then frozen
    let constant = gprime_calibrate(&ctx, 100, &state_box, time_range, seed ^ 0x33)?;
    let gp = gprime_check(&ctx, 100, constant, &state_box, time_range, seed ^ 0x34)?;
    out.push(CheckResult::new(
        "hjb.gprime",
        "doubled-variable Hamiltonian differences bounded by the calibrated constant",
        gp.violations == 0,
        json!({"trials": gp.trials, "violations": gp.violations, "constant": constant, "max_ratio": gp.max_ratio}),
    ));

    // frozen-coefficient expansion rate on a quadratic test function
    let quadratic = (1..=n)
        .map(|i| format!("x{i}^2"))
        .collect::<Vec<_>>()
        .join(" + ");
    let phi = SmoothTestFunction::parse(&quadratic, n)?;
    phi.validate_derivatives(time_range, &state_box, seed ^ 0x35)?;
    let center = DVector::from_iterator(n, loaded.sgrid.axes().iter().map(|a| 0.5 * (a.lo + a.hi)));
    let span = loaded.tgrid.horizon - loaded.tgrid.t0;
    let base = (0.1f64).min(0.4 * span);
    let deltas = [base, base / 2.0, base / 4.0];
    let rows = freezing_check(
        &ctx,
        &phi,
        loaded.tgrid.t0,
        &center,
        &deltas,
        loaded.picard_iters,
    )?;
    let max_error = rows.iter().map(|r| r.error).fold(0.0, f64::max);
    let min_order = rows
        .iter()
        .filter_map(|r| r.order)
        .fold(f64::INFINITY, f64::min);
    let passed = max_error <= 1e-8 || min_order >= 1.4;
    let table: Vec<_> = rows
        .iter()
        .map(|r| json!({"delta": r.delta, "error": r.error, "order": r.order}))
        .collect();
    out.push(CheckResult::new(
        "hjb.freezing",
        "frozen-coefficient expansion error decays at order >= 1.4",
        passed,
        json!({"rows": table}),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{build, ProblemConfig};

    fn heat_loaded() -> LoadedProblem {
        let text = r#"{
  "dimensions": {"state": 1, "noise": 1, "control": 1},
  "generator": {"sigma_min": 0.25, "atoms": [
    {"sigma": [0.25], "penalty": 0.0},
    {"sigma": [1.0], "penalty": 0.0}
  ]},
  "coefficients": {"drift": ["0"], "diffusion": [["1"]], "terminal": "x1^2"},
  "control_set": {"bounds": [[0.0, 0.0]], "points_per_axis": [1]},
  "lipschitz": 9.0,
  "grids": {
    "space": [{"lo": -4.0, "hi": 4.0, "points": 81}],
    "time": {"horizon": 1.0, "steps": 50}
  },
  "solver": {"picard_iters": 1, "quadrature": {"rule": "ternary", "spread": 1.4142135623730951}, "seed": 11}
}"#;
        let config: ProblemConfig = serde_json::from_str(text).unwrap();
        build(&config, "heat".into()).unwrap()
    }

    #[test]
    fn suite_passes_on_heat_problem() {
        let loaded = heat_loaded();
        let checks = run_validation_suite(&loaded).unwrap();
        assert!(checks.len() >= 12);
        for check in &checks {
            assert!(check.passed, "{} failed: {}", check.id, check.details);
        }
    }
}
