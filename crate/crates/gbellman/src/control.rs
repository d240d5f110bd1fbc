//! The controlled forward-backward system and its value iteration.
//!
//! One backward step of the recursive cost under a fixed control `u` is
//!
//! ```text
//! (S_u φ)(x) = max_i [ Σ_q w_q φ̂(x'_{i,q})
//!                      + Δ (f(t, x, y, u) + Σ_{jk} g_jk(t, x, y, u) S_i^{jk})
//!                      - Δ c_i ]
//! x'_{i,q}   = x + b Δ + Σ_{jk} h_jk S_i^{jk} Δ + √Δ σ L_i ξ_q
//! ```
//!
//! with the driver argument `y` seeded at φ(x) and refreshed by a
//! configurable number of Picard corrections. The value iteration minimizes
//! the step over the control grid at every level, realizing the essential
//! infimum as a pointwise finite minimum; the one-step minimization is the
//! discrete dynamic programming principle by construction, and the step
//! operator is monotone, which is the discrete comparison theorem.

use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::grid::{GridFunction, SpaceGrid, TimeGrid};
use crate::problem::ControlProblem;
use crate::quad::Quadrature;
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Value function samples on a time × space grid, with the minimizing
/// control's index recorded per node.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    tgrid: TimeGrid,
    levels: Vec<GridFunction>,
    argmin: Vec<Vec<u32>>,
}

impl ValueSurface {
    pub fn time_grid(&self) -> &TimeGrid {
        &self.tgrid
    }

    pub fn space_grid(&self) -> &SpaceGrid {
        self.levels[0].grid()
    }

    /// Number of stored time levels (steps + 1).
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn slice(&self, level: usize) -> &GridFunction {
        &self.levels[level]
    }

    pub fn argmin(&self, level: usize) -> &[u32] {
        &self.argmin[level]
    }

    pub fn value(&self, level: usize, flat: usize) -> f64 {
        self.levels[level].value(flat)
    }

    /// Value at the earliest time level, interpolated at `x`.
    pub fn initial_value(&self, x: &DVector<f64>) -> f64 {
        self.levels[0].interpolate(x)
    }

    pub fn from_parts(
        tgrid: TimeGrid,
        levels: Vec<GridFunction>,
        argmin: Vec<Vec<u32>>,
    ) -> ValueSurface {
        ValueSurface {
            tgrid,
            levels,
            argmin,
        }
    }
}

/// Euler transition of the state under atom `atom_index` and quadrature node
/// `node_index`.
#[allow(clippy::too_many_arguments)]
pub fn step_state(
    prob: &ControlProblem,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    atom_index: usize,
    node_index: usize,
    dt: f64,
    gen: &Generator,
    quad: &Quadrature,
) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveStep(dt));
    }
    if atom_index >= gen.atoms().len() {
        return Err(Error::IndexOutOfRange {
            context: "atom index",
            got: atom_index,
            limit: gen.atoms().len(),
        });
    }
    if node_index >= quad.len() {
        return Err(Error::IndexOutOfRange {
            context: "quadrature node index",
            got: node_index,
            limit: quad.len(),
        });
    }
    if x.len() != prob.state_dim() || u.len() != prob.control_dim() {
        return Err(Error::DimensionMismatch {
            expected: prob.state_dim(),
            got: x.len(),
            context: "state or control point vs problem",
        });
    }
    let xs = x.as_slice();
    let us = u.as_slice();
    let atom = &gen.atoms()[atom_index];
    let drift = prob.drift(t, xs, us)?;
    let qv = prob.qv_drift_contracted(t, xs, us, atom.sigma())?;
    let sigma = prob.diffusion(t, xs, us)?;
    let noise = atom.factor() * &quad.nodes()[node_index];
    Ok(x + (drift + qv) * dt + sigma * noise * dt.sqrt())
}

/// One backward-semigroup step under a fixed control.
///
/// `picard_iters` counts applications of the driver update; the predictor is
/// the next-level value at the same point. Reduction order is fixed (atoms
/// then nodes, ascending), making results independent of parallel
/// partitioning.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_step(
    prob: &ControlProblem,
    v_next: &GridFunction,
    t: f64,
    dt: f64,
    u: &DVector<f64>,
    gen: &Generator,
    quad: &Quadrature,
    picard_iters: usize,
) -> Result<GridFunction> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveStep(dt));
    }
    let contraction = dt * prob.lipschitz();
    if contraction >= 1.0 {
        return Err(Error::ContractionViolated {
            product: contraction,
        });
    }
    if v_next.grid().dim() != prob.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: prob.state_dim(),
            got: v_next.grid().dim(),
            context: "space grid vs problem",
        });
    }
    if gen.dim() != prob.noise_dim() || quad.dim() != prob.noise_dim() {
        return Err(Error::DimensionMismatch {
            expected: prob.noise_dim(),
            got: if gen.dim() != prob.noise_dim() {
                gen.dim()
            } else {
                quad.dim()
            },
            context: "generator or quadrature vs problem",
        });
    }
    if u.len() != prob.control_dim() {
        return Err(Error::DimensionMismatch {
            expected: prob.control_dim(),
            got: u.len(),
            context: "control point vs problem",
        });
    }
    let grid = v_next.grid().clone();
    let sqrt_dt = dt.sqrt();
    // per-(atom, node) noise displacement in noise space: L_i ξ_q
    let noise_dirs: Vec<Vec<DVector<f64>>> = gen
        .atoms()
        .iter()
        .map(|atom| quad.nodes().iter().map(|xi| atom.factor() * xi).collect())
        .collect();
    let us = u.as_slice();

    let values: Result<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let x = grid.point(flat);
            let xs = x.as_slice();
            let drift = prob.drift(t, xs, us)?;
            let sigma = prob.diffusion(t, xs, us)?;
            let n_atoms = gen.atoms().len();
            // expectation part: independent of the driver argument
            let mut expectations = Vec::with_capacity(n_atoms);
            for (atom, dirs) in gen.atoms().iter().zip(noise_dirs.iter()) {
                let qv = prob.qv_drift_contracted(t, xs, us, atom.sigma())?;
                let base = &x + (&drift + qv) * dt;
                let mut acc = 0.0;
                for (dir, w) in dirs.iter().zip(quad.weights().iter()) {
                    let target = &base + &sigma * dir * sqrt_dt;
                    acc += w * v_next.interpolate(&target);
                }
                expectations.push(acc);
            }
            // driver corrections
            let mut y = v_next.value(flat);
            for _ in 0..picard_iters {
                let f = prob.running_cost(t, xs, y, us)?;
                let mut best = f64::NEG_INFINITY;
                for (i, atom) in gen.atoms().iter().enumerate() {
                    let g = prob.qv_cost_contracted(t, xs, y, us, atom.sigma())?;
                    let candidate = expectations[i] + dt * (f + g) - dt * atom.penalty();
                    best = best.max(candidate);
                }
                y = best;
            }
            Ok(y)
        })
        .collect();
    GridFunction::new(grid, values?)
}

/// Applies [`semigroup_step`] for every control and takes the pointwise
/// minimum; ties resolve to the smallest control index.
pub fn min_over_controls(
    prob: &ControlProblem,
    v_next: &GridFunction,
    t: f64,
    dt: f64,
    gen: &Generator,
    quad: &Quadrature,
    picard_iters: usize,
) -> Result<(GridFunction, Vec<u32>)> {
    let mut best: Option<Vec<f64>> = None;
    let mut argmin = vec![0u32; v_next.grid().len()];
    for (c, u) in prob.controls().iter().enumerate() {
        let stepped = semigroup_step(prob, v_next, t, dt, u, gen, quad, picard_iters)?;
        match &mut best {
            None => best = Some(stepped.values().to_vec()),
            Some(current) => {
                for (flat, &v) in stepped.values().iter().enumerate() {
                    if v < current[flat] {
                        current[flat] = v;
                        argmin[flat] = c as u32;
                    }
                }
            }
        }
    }
    let values = best.expect("control grid is nonempty");
    Ok((GridFunction::new(v_next.grid().clone(), values)?, argmin))
}

/// Backward value iteration from the terminal payoff of `prob`.
pub fn solve_value(
    prob: &ControlProblem,
    gen: &Generator,
    quad: &Quadrature,
    tgrid: &TimeGrid,
    sgrid: &SpaceGrid,
    picard_iters: usize,
) -> Result<ValueSurface> {
    if sgrid.dim() != prob.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: prob.state_dim(),
            got: sgrid.dim(),
            context: "space grid vs problem",
        });
    }
    let terminal = GridFunction::try_from_fn(sgrid.clone(), |x| prob.terminal(x.as_slice()))?;
    solve_value_with_terminal(prob, gen, quad, tgrid, terminal, picard_iters)
}

/// Backward value iteration from an explicit terminal slice.
pub fn solve_value_with_terminal(
    prob: &ControlProblem,
    gen: &Generator,
    quad: &Quadrature,
    tgrid: &TimeGrid,
    terminal: GridFunction,
    picard_iters: usize,
) -> Result<ValueSurface> {
    let dt = tgrid.dt();
    let contraction = dt * prob.lipschitz();
    if contraction >= 1.0 {
        return Err(Error::ContractionViolated {
            product: contraction,
        });
    }
    let n_points = terminal.grid().len();
    let mut levels = vec![terminal];
    let mut argmins = vec![vec![0u32; n_points]];
    for back in 0..tgrid.steps {
        let level = tgrid.steps - 1 - back;
        let t = tgrid.time(level);
        let (values, argmin) =
            min_over_controls(prob, &levels[back], t, dt, gen, quad, picard_iters)?;
        levels.push(values);
        argmins.push(argmin);
    }
    levels.reverse();
    argmins.reverse();
    Ok(ValueSurface::from_parts(*tgrid, levels, argmins))
}

/// Residual of the multi-window dynamic programming identity at level `l`:
/// the fixed-control `j`-step semigroup is minimized over the control grid
/// and compared with the stored level, sup over the interior third.
///
/// For `j = 1` this recomputes exactly the value iteration step, so the
/// residual is zero to the last bit.
pub fn dpp_residual(
    prob: &ControlProblem,
    gen: &Generator,
    quad: &Quadrature,
    surface: &ValueSurface,
    level: usize,
    windows: usize,
) -> Result<f64> {
    let steps = surface.num_levels() - 1;
    if windows < 1 || level + windows > steps {
        return Err(Error::IndexOutOfRange {
            context: "dpp window",
            got: level + windows,
            limit: steps,
        });
    }
    let dt = surface.time_grid().dt();
    let picard = 1;
    if windows == 1 {
        let (values, _) = min_over_controls(
            prob,
            surface.slice(level + 1),
            surface.time_grid().time(level),
            dt,
            gen,
            quad,
            picard,
        )?;
        return Ok(sup_diff_interior(surface.slice(level), &values));
    }
    let mut best: Option<Vec<f64>> = None;
    for u in prob.controls() {
        let mut w = surface.slice(level + windows).clone();
        for m in (level..level + windows).rev() {
            w = semigroup_step(
                prob,
                &w,
                surface.time_grid().time(m),
                dt,
                u,
                gen,
                quad,
                picard,
            )?;
        }
        match &mut best {
            None => best = Some(w.values().to_vec()),
            Some(current) => {
                for (flat, &v) in w.values().iter().enumerate() {
                    if v < current[flat] {
                        current[flat] = v;
                    }
                }
            }
        }
    }
    let best = GridFunction::new(
        surface.space_grid().clone(),
        best.expect("control grid is nonempty"),
    )?;
    Ok(sup_diff_interior(surface.slice(level), &best))
}

fn sup_diff_interior(a: &GridFunction, b: &GridFunction) -> f64 {
    a.grid()
        .interior_third()
        .into_iter()
        .map(|flat| (a.value(flat) - b.value(flat)).abs())
        .fold(0.0, f64::max)
}

/// Outcome of a randomized pointwise comparison run.
#[derive(Debug, Clone, Copy)]
pub struct ComparisonReport {
    pub trials: usize,
    pub violations: usize,
    /// Smallest pointwise gap `S_u(upper) - S_u(lower)` observed.
    pub min_gap: f64,
}

/// Random ordered terminal pairs must stay ordered through one semigroup
/// step, for every control; counts pointwise violations below `-tolerance`.
#[allow(clippy::too_many_arguments)]
pub fn comparison_check(
    prob: &ControlProblem,
    gen: &Generator,
    quad: &Quadrature,
    grid: &SpaceGrid,
    t: f64,
    dt: f64,
    picard_iters: usize,
    trials: usize,
    seed: u64,
    tolerance: f64,
) -> Result<ComparisonReport> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut min_gap = f64::INFINITY;
    for _ in 0..trials {
        let lower_vals: Vec<f64> = (0..grid.len())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let upper_vals: Vec<f64> = lower_vals
            .iter()
            .map(|v| v + rng.random_range(0.0..1.0))
            .collect();
        let lower = GridFunction::new(grid.clone(), lower_vals)?;
        let upper = GridFunction::new(grid.clone(), upper_vals)?;
        for u in prob.controls() {
            let s_lower = semigroup_step(prob, &lower, t, dt, u, gen, quad, picard_iters)?;
            let s_upper = semigroup_step(prob, &upper, t, dt, u, gen, quad, picard_iters)?;
            for (hi, lo) in s_upper.values().iter().zip(s_lower.values().iter()) {
                let gap = hi - lo;
                min_gap = min_gap.min(gap);
                if gap < -tolerance {
                    violations += 1;
                }
            }
        }
    }
    Ok(ComparisonReport {
        trials,
        violations,
        min_gap,
    })
}

/// Monte Carlo moments of the state under one fixed prior and control.
#[derive(Debug, Clone, Copy)]
pub struct PathMomentReport {
    pub paths: usize,
    pub window: f64,
    pub steps: usize,
    /// Mean of `sup_s |X_s - x0|^2`.
    pub sup_moment_p2: f64,
    /// Mean of `sup_s |X_s - x0|^4`.
    pub sup_moment_p4: f64,
    /// `sup_moment_p2 / ((1 + |x0|^2) δ)`.
    pub implied_constant_p2: f64,
    /// `sup_moment_p4 / ((1 + |x0|^4) δ^2)`.
    pub implied_constant_p4: f64,
}

/// Simulates Euler paths over `[t0, t0 + window]` under a fixed control and
/// a fixed covariance atom; reproducible bit-exactly from the seed with one
/// counter-derived stream per path.
#[allow(clippy::too_many_arguments)]
pub fn simulate_state_paths(
    prob: &ControlProblem,
    gen: &Generator,
    u: &DVector<f64>,
    atom_index: usize,
    x0: &DVector<f64>,
    t0: f64,
    window: f64,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<PathMomentReport> {
    if atom_index >= gen.atoms().len() {
        return Err(Error::IndexOutOfRange {
            context: "atom index",
            got: atom_index,
            limit: gen.atoms().len(),
        });
    }
    if steps == 0 || paths == 0 || !(window > 0.0) {
        return Err(Error::BadConfig {
            field: "path simulation".into(),
            message: "need window > 0, steps >= 1, paths >= 1".into(),
        });
    }
    let atom = &gen.atoms()[atom_index];
    let dt = window / steps as f64;
    let sqrt_dt = dt.sqrt();
    let d = gen.dim();
    let us = u.as_slice();

    let sums: Result<Vec<(f64, f64)>> = (0..paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(path as u64 + 1);
            let mut x = x0.clone();
            let mut sup2: f64 = 0.0;
            for k in 0..steps {
                let t = t0 + dt * k as f64;
                let xs_vec: Vec<f64> = x.iter().copied().collect();
                let drift = prob.drift(t, &xs_vec, us)?;
                let qv = prob.qv_drift_contracted(t, &xs_vec, us, atom.sigma())?;
                let sigma = prob.diffusion(t, &xs_vec, us)?;
                let z =
                    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
                x += (drift + qv) * dt + sigma * (atom.factor() * z) * sqrt_dt;
                let dev2 = (&x - x0).norm_squared();
                sup2 = sup2.max(dev2);
            }
            Ok((sup2, sup2 * sup2))
        })
        .collect();
    let sums = sums?;
    let m2: f64 = sums.iter().map(|s| s.0).sum::<f64>() / paths as f64;
    let m4: f64 = sums.iter().map(|s| s.1).sum::<f64>() / paths as f64;
    let x0n2 = x0.norm_squared();
    Ok(PathMomentReport {
        paths,
        window,
        steps,
        sup_moment_p2: m2,
        sup_moment_p4: m4,
        implied_constant_p2: m2 / ((1.0 + x0n2) * window),
        implied_constant_p4: m4 / ((1.0 + x0n2 * x0n2) * window * window),
    })
}

/// Largest difference quotient `|V(t, x) - V(t, x')| / |x - x'|` between
/// adjacent grid nodes, over all axes and time slices. Regularity in space
/// shows up as this staying bounded under grid refinement.
pub fn max_lipschitz_quotient(surface: &ValueSurface) -> f64 {
    let grid = surface.space_grid();
    let mut worst: f64 = 0.0;
    for level in 0..surface.num_levels() {
        let slice = surface.slice(level);
        for flat in 0..grid.len() {
            let multi = grid.unravel(flat);
            for (axis, a) in grid.axes().iter().enumerate() {
                if multi[axis] + 1 < a.count {
                    let mut next = multi.clone();
                    next[axis] += 1;
                    let other = grid.ravel(&next);
                    worst = worst.max((slice.value(other) - slice.value(flat)).abs() / a.spacing());
                }
            }
        }
    }
    worst
}

/// Largest normalized time increment
/// `|V(t, x) - V(t + δ, x)| / ((1 + |x|) √δ)` over dyadic spans `δ`.
/// Regularity of order one half in time shows up as this staying bounded
/// under time refinement.
pub fn max_holder_quotient(surface: &ValueSurface) -> f64 {
    let grid = surface.space_grid();
    let steps = surface.num_levels() - 1;
    let dt = surface.time_grid().dt();
    let mut worst: f64 = 0.0;
    let mut span = 1usize;
    while span <= steps / 2 {
        let delta = span as f64 * dt;
        for level in (0..=steps - span).step_by(span.max(steps / 16).max(1)) {
            for flat in 0..grid.len() {
                let x = grid.point(flat).norm();
                let q = (surface.value(level, flat) - surface.value(level + span, flat)).abs()
                    / ((1.0 + x) * delta.sqrt());
                worst = worst.max(q);
            }
        }
        span *= 2;
    }
    worst
}
