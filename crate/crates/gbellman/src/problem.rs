//! Validated control-problem definitions.
//!
//! A [`ControlProblem`] carries the coefficient expressions of the controlled
//! forward dynamics
//!
//! ```text
//! dX = b(s, X, u) ds + Σ_{jk} h_jk(s, X, u) d⟨Bʲ, Bᵏ⟩ + σ(s, X, u) dB
//! ```
//!
//! and of the recursive cost (running cost `f`, quadratic-variation cost
//! `g_jk`, terminal payoff `Φ`), together with a finite control grid inside
//! a compact box and a declared joint Lipschitz constant. Validation samples
//! the symmetry of `h`/`g` in their quadratic-variation indices and the
//! declared Lipschitz bound at random points.

use crate::error::{Error, Result};
use crate::expr::{DiffVar, Dims, EvalPoint, Expr};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

/// Coefficient data of one stochastic recursive control problem.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    state_dim: usize,
    noise_dim: usize,
    control_dim: usize,
    drift: Vec<Expr>,
    qv_drift: Vec<Vec<Vec<Expr>>>,
    diffusion: Vec<Vec<Expr>>,
    running_cost: Expr,
    qv_cost: Vec<Vec<Expr>>,
    terminal: Expr,
    controls: Vec<DVector<f64>>,
    control_box: Vec<(f64, f64)>,
    lipschitz: f64,
}

/// Everything needed to build a [`ControlProblem`].
pub struct ProblemParts {
    pub state_dim: usize,
    pub noise_dim: usize,
    pub control_dim: usize,
    /// `b`: n expressions in (s, x, u).
    pub drift: Vec<Expr>,
    /// `h_jk`: d×d matrix of n-vectors, symmetric in (j, k).
    pub qv_drift: Vec<Vec<Vec<Expr>>>,
    /// `σ`: n×d matrix in (s, x, u).
    pub diffusion: Vec<Vec<Expr>>,
    /// `f`: scalar in (s, x, y, u).
    pub running_cost: Expr,
    /// `g_jk`: d×d scalar matrix in (s, x, y, u).
    pub qv_cost: Vec<Vec<Expr>>,
    /// `Φ`: scalar in x.
    pub terminal: Expr,
    /// Finite control grid inside `control_box`.
    pub controls: Vec<DVector<f64>>,
    pub control_box: Vec<(f64, f64)>,
    pub lipschitz: f64,
}

impl ControlProblem {
    pub fn new(parts: ProblemParts) -> Result<ControlProblem> {
        let ProblemParts {
            state_dim,
            noise_dim,
            control_dim,
            drift,
            qv_drift,
            diffusion,
            running_cost,
            qv_cost,
            terminal,
            controls,
            control_box,
            lipschitz,
        } = parts;

        let shape_err = |context: &'static str, expected: usize, got: usize| {
            Err(Error::DimensionMismatch {
                expected,
                got,
                context,
            })
        };
        if drift.len() != state_dim {
            return shape_err("drift vector", state_dim, drift.len());
        }
        if qv_drift.len() != noise_dim {
            return shape_err("qv drift rows", noise_dim, qv_drift.len());
        }
        for row in &qv_drift {
            if row.len() != noise_dim {
                return shape_err("qv drift columns", noise_dim, row.len());
            }
            for entry in row {
                if entry.len() != state_dim {
                    return shape_err("qv drift entry", state_dim, entry.len());
                }
            }
        }
        if diffusion.len() != state_dim {
            return shape_err("diffusion rows", state_dim, diffusion.len());
        }
        for row in &diffusion {
            if row.len() != noise_dim {
                return shape_err("diffusion columns", noise_dim, row.len());
            }
        }
        if qv_cost.len() != noise_dim {
            return shape_err("qv cost rows", noise_dim, qv_cost.len());
        }
        for row in &qv_cost {
            if row.len() != noise_dim {
                return shape_err("qv cost columns", noise_dim, row.len());
            }
        }
        if control_box.len() != control_dim {
            return shape_err("control box", control_dim, control_box.len());
        }
        if controls.is_empty() {
            return Err(Error::EmptyControlGrid);
        }
        for (index, point) in controls.iter().enumerate() {
            if point.len() != control_dim {
                return shape_err("control point", control_dim, point.len());
            }
            let inside = point
                .iter()
                .zip(control_box.iter())
                .all(|(v, (lo, hi))| *v >= lo - 1e-12 && *v <= hi + 1e-12);
            if !inside {
                return Err(Error::ControlOutsideBox { index });
            }
        }
        if !(lipschitz > 0.0) || !lipschitz.is_finite() {
            return Err(Error::BadConfig {
                field: "lipschitz".into(),
                message: format!("must be a positive number, got {lipschitz}"),
            });
        }
        // state-equation coefficients must not depend on the backward value
        if drift.iter().any(Expr::references_value) {
            return Err(Error::ForbiddenValueVariable { name: "drift" });
        }
        if diffusion.iter().flatten().any(Expr::references_value) {
            return Err(Error::ForbiddenValueVariable { name: "diffusion" });
        }
        if qv_drift
            .iter()
            .flatten()
            .flatten()
            .any(Expr::references_value)
        {
            return Err(Error::ForbiddenValueVariable { name: "qv drift" });
        }
        if terminal.references_value() {
            return Err(Error::ForbiddenValueVariable { name: "terminal" });
        }

        Ok(ControlProblem {
            state_dim,
            noise_dim,
            control_dim,
            drift,
            qv_drift,
            diffusion,
            running_cost,
            qv_cost,
            terminal,
            controls,
            control_box,
            lipschitz,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn controls(&self) -> &[DVector<f64>] {
        &self.controls
    }

    pub fn control_box(&self) -> &[(f64, f64)] {
        &self.control_box
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.state_dim, self.control_dim)
    }

    pub fn terminal_expr(&self) -> &Expr {
        &self.terminal
    }

    /// Evaluates the drift vector b(s, x, u).
    pub fn drift(&self, s: f64, x: &[f64], u: &[f64]) -> Result<DVector<f64>> {
        let p = EvalPoint::new(s, x, 0.0, u);
        let mut out = DVector::zeros(self.state_dim);
        for (i, e) in self.drift.iter().enumerate() {
            out[i] = e.eval(&p).map_err(|err| named(err, "drift"))?;
        }
        Ok(out)
    }

    /// Evaluates the diffusion matrix σ(s, x, u), n×d.
    pub fn diffusion(&self, s: f64, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
        let p = EvalPoint::new(s, x, 0.0, u);
        let mut out = DMatrix::zeros(self.state_dim, self.noise_dim);
        for i in 0..self.state_dim {
            for j in 0..self.noise_dim {
                out[(i, j)] = self.diffusion[i][j]
                    .eval(&p)
                    .map_err(|err| named(err, "diffusion"))?;
            }
        }
        Ok(out)
    }

    /// Evaluates the quadratic-variation drift contracted against a
    /// covariance matrix: `Σ_{jk} h_jk(s, x, u) S_jk`, an n-vector.
    ///
    /// Only the upper triangle of `h` is evaluated; the lower one is taken
    /// by symmetry, so the result is exactly symmetric in (j, k).
    pub fn qv_drift_contracted(
        &self,
        s: f64,
        x: &[f64],
        u: &[f64],
        sigma: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        let p = EvalPoint::new(s, x, 0.0, u);
        let mut out = DVector::zeros(self.state_dim);
        for j in 0..self.noise_dim {
            for k in j..self.noise_dim {
                let weight = if k == j {
                    sigma[(j, k)]
                } else {
                    sigma[(j, k)] + sigma[(k, j)]
                };
                if weight == 0.0 {
                    continue;
                }
                for i in 0..self.state_dim {
                    let v = self.qv_drift[j][k][i]
                        .eval(&p)
                        .map_err(|err| named(err, "qv drift"))?;
                    out[i] += weight * v;
                }
            }
        }
        Ok(out)
    }

    /// True if the running or quadratic-variation cost references the
    /// backward value `y` (the recursive coupling is active).
    pub fn driver_references_value(&self) -> bool {
        self.running_cost.references_value()
            || self.qv_cost.iter().flatten().any(Expr::references_value)
    }

    /// True if every entry of `h` is the zero constant.
    pub fn qv_drift_is_zero(&self) -> bool {
        self.qv_drift
            .iter()
            .flatten()
            .flatten()
            .all(|e| matches!(e, Expr::Const(c) if *c == 0.0))
    }

    /// Evaluates the running cost f(s, x, y, u).
    pub fn running_cost(&self, s: f64, x: &[f64], y: f64, u: &[f64]) -> Result<f64> {
        self.running_cost
            .eval(&EvalPoint::new(s, x, y, u))
            .map_err(|err| named(err, "running cost"))
    }

    /// Evaluates `Σ_{jk} g_jk(s, x, y, u) S_jk`.
    pub fn qv_cost_contracted(
        &self,
        s: f64,
        x: &[f64],
        y: f64,
        u: &[f64],
        sigma: &DMatrix<f64>,
    ) -> Result<f64> {
        let p = EvalPoint::new(s, x, y, u);
        let mut acc = 0.0;
        for j in 0..self.noise_dim {
            for k in j..self.noise_dim {
                let weight = if k == j {
                    sigma[(j, k)]
                } else {
                    sigma[(j, k)] + sigma[(k, j)]
                };
                if weight == 0.0 {
                    continue;
                }
                acc += weight
                    * self.qv_cost[j][k]
                        .eval(&p)
                        .map_err(|err| named(err, "qv cost"))?;
            }
        }
        Ok(acc)
    }

    /// Evaluates the d×d matrix `g_jk(s, x, y, u)` (upper triangle mirrored).
    pub fn qv_cost_matrix(&self, s: f64, x: &[f64], y: f64, u: &[f64]) -> Result<DMatrix<f64>> {
        let p = EvalPoint::new(s, x, y, u);
        let mut out = DMatrix::zeros(self.noise_dim, self.noise_dim);
        for j in 0..self.noise_dim {
            for k in j..self.noise_dim {
                let v = self.qv_cost[j][k]
                    .eval(&p)
                    .map_err(|err| named(err, "qv cost"))?;
                out[(j, k)] = v;
                out[(k, j)] = v;
            }
        }
        Ok(out)
    }

    /// Evaluates the d×d matrix of h-vectors contracted against a direction
    /// `p`: entry (j, k) is `⟨p, h_jk(s, x, u)⟩` (upper triangle mirrored).
    pub fn qv_drift_matrix_against(
        &self,
        s: f64,
        x: &[f64],
        u: &[f64],
        direction: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let p = EvalPoint::new(s, x, 0.0, u);
        let mut out = DMatrix::zeros(self.noise_dim, self.noise_dim);
        for j in 0..self.noise_dim {
            for k in j..self.noise_dim {
                let mut acc = 0.0;
                for i in 0..self.state_dim {
                    acc += direction[i]
                        * self.qv_drift[j][k][i]
                            .eval(&p)
                            .map_err(|err| named(err, "qv drift"))?;
                }
                out[(j, k)] = acc;
                out[(k, j)] = acc;
            }
        }
        Ok(out)
    }

    /// Evaluates the terminal payoff Φ(x).
    pub fn terminal(&self, x: &[f64]) -> Result<f64> {
        self.terminal
            .eval(&EvalPoint::new(0.0, x, 0.0, &vec![0.0; self.control_dim]))
            .map_err(|err| named(err, "terminal payoff"))
    }

    /// Samples the structural assumptions: symmetry of `h`/`g` in their
    /// quadratic-variation indices (100 points, 1e-12) and the declared
    /// Lipschitz constant (200 argument pairs, relative slack 1e-9).
    pub fn validate_sampled(&self, ranges: &SampleRanges, seed: u64) -> Result<()> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        self.check_index_symmetry(ranges, &mut rng)?;
        self.check_lipschitz(ranges, &mut rng)
    }

    fn check_index_symmetry(&self, ranges: &SampleRanges, rng: &mut ChaCha12Rng) -> Result<()> {
        // the upper-triangle storage makes h and g exactly symmetric by
        // construction; this samples the user's full matrix as declared
        for _ in 0..100 {
            let (s, x, y, u) = ranges.sample(rng);
            let p = EvalPoint::new(s, &x, y, &u);
            for j in 0..self.noise_dim {
                for k in 0..self.noise_dim {
                    let g1 = self.qv_cost[j][k]
                        .eval(&p)
                        .map_err(|e| named(e, "qv cost"))?;
                    let g2 = self.qv_cost[k][j]
                        .eval(&p)
                        .map_err(|e| named(e, "qv cost"))?;
                    if (g1 - g2).abs() > 1e-12 {
                        return Err(Error::CoefficientAsymmetry {
                            name: "qv cost",
                            deviation: (g1 - g2).abs(),
                        });
                    }
                    for i in 0..self.state_dim {
                        let h1 = self.qv_drift[j][k][i]
                            .eval(&p)
                            .map_err(|e| named(e, "qv drift"))?;
                        let h2 = self.qv_drift[k][j][i]
                            .eval(&p)
                            .map_err(|e| named(e, "qv drift"))?;
                        if (h1 - h2).abs() > 1e-12 {
                            return Err(Error::CoefficientAsymmetry {
                                name: "qv drift",
                                deviation: (h1 - h2).abs(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn check_lipschitz(&self, ranges: &SampleRanges, rng: &mut ChaCha12Rng) -> Result<()> {
        let slack = 1.0 + 1e-9;
        for _ in 0..200 {
            let (s, x1, y1, u1) = ranges.sample(rng);
            let (_, x2, y2, u2) = ranges.sample(rng);
            let dx: f64 = x1
                .iter()
                .zip(x2.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let du: f64 = u1
                .iter()
                .zip(u2.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let dy = (y1 - y2).abs();
            let state_budget = self.lipschitz * (dx + du) * slack + 1e-12;
            let full_budget = self.lipschitz * (dx + dy + du) * slack + 1e-12;

            let checks: Vec<(&'static str, f64, f64)> = vec![
                (
                    "drift",
                    (self.drift(s, &x1, &u1)? - self.drift(s, &x2, &u2)?).norm(),
                    state_budget,
                ),
                (
                    "diffusion",
                    (self.diffusion(s, &x1, &u1)? - self.diffusion(s, &x2, &u2)?).norm(),
                    state_budget,
                ),
                (
                    "terminal payoff",
                    (self.terminal(&x1)? - self.terminal(&x2)?).abs(),
                    self.lipschitz * dx * slack + 1e-12,
                ),
                (
                    "running cost",
                    (self.running_cost(s, &x1, y1, &u1)? - self.running_cost(s, &x2, y2, &u2)?)
                        .abs(),
                    full_budget,
                ),
            ];
            for (name, increment, budget) in checks {
                if increment > budget {
                    return Err(Error::LipschitzExceeded {
                        name,
                        ratio: increment / (budget / (self.lipschitz * slack)).max(1e-300),
                        declared: self.lipschitz,
                    });
                }
            }
            // h and g entry-wise
            let p1 = EvalPoint::new(s, &x1, y1, &u1);
            let p2 = EvalPoint::new(s, &x2, y2, &u2);
            for j in 0..self.noise_dim {
                for k in j..self.noise_dim {
                    let g_inc = (self.qv_cost[j][k]
                        .eval(&p1)
                        .map_err(|e| named(e, "qv cost"))?
                        - self.qv_cost[j][k]
                            .eval(&p2)
                            .map_err(|e| named(e, "qv cost"))?)
                    .abs();
                    if g_inc > full_budget {
                        return Err(Error::LipschitzExceeded {
                            name: "qv cost",
                            ratio: g_inc,
                            declared: self.lipschitz,
                        });
                    }
                    let mut h_inc = 0.0f64;
                    for i in 0..self.state_dim {
                        let a = self.qv_drift[j][k][i]
                            .eval(&p1)
                            .map_err(|e| named(e, "qv drift"))?;
                        let b = self.qv_drift[j][k][i]
                            .eval(&p2)
                            .map_err(|e| named(e, "qv drift"))?;
                        h_inc += (a - b) * (a - b);
                    }
                    if h_inc.sqrt() > state_budget {
                        return Err(Error::LipschitzExceeded {
                            name: "qv drift",
                            ratio: h_inc.sqrt(),
                            declared: self.lipschitz,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn named(err: Error, name: &'static str) -> Error {
    match err {
        Error::Evaluation { message, .. } => Error::Evaluation {
            context: name.to_string(),
            message,
        },
        other => other,
    }
}

/// Sampling box for the randomized structural checks.
#[derive(Debug, Clone)]
pub struct SampleRanges {
    pub time: (f64, f64),
    pub state: Vec<(f64, f64)>,
    pub value: (f64, f64),
    pub control: Vec<(f64, f64)>,
}

impl SampleRanges {
    fn sample(&self, rng: &mut ChaCha12Rng) -> (f64, Vec<f64>, f64, Vec<f64>) {
        let unit = |rng: &mut ChaCha12Rng, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        let s = unit(rng, self.time);
        let x: Vec<f64> = self.state.iter().map(|&r| unit(rng, r)).collect();
        let y = unit(rng, self.value);
        let u: Vec<f64> = self.control.iter().map(|&r| unit(rng, r)).collect();
        (s, x, y, u)
    }
}

/// A smooth test function φ(s, x) with symbolic first time derivative and
/// first/second spatial derivatives.
#[derive(Debug, Clone)]
pub struct SmoothTestFunction {
    expr: Expr,
    time_derivative: Expr,
    gradient: Vec<Expr>,
    hessian: Vec<Vec<Expr>>,
    state_dim: usize,
}

impl SmoothTestFunction {
    /// Builds the derivative expressions symbolically.
    pub fn new(expr: Expr, state_dim: usize) -> Result<SmoothTestFunction> {
        let time_derivative = expr.differentiate(DiffVar::Time)?;
        let mut gradient = Vec::with_capacity(state_dim);
        for i in 0..state_dim {
            gradient.push(expr.differentiate(DiffVar::State(i))?);
        }
        let mut hessian = Vec::with_capacity(state_dim);
        for partial in &gradient {
            let mut row = Vec::with_capacity(state_dim);
            for j in 0..state_dim {
                row.push(partial.differentiate(DiffVar::State(j))?);
            }
            hessian.push(row);
        }
        Ok(SmoothTestFunction {
            expr,
            time_derivative,
            gradient,
            hessian,
            state_dim,
        })
    }

    /// Parses the formula and differentiates it.
    pub fn parse(text: &str, state_dim: usize) -> Result<SmoothTestFunction> {
        let expr = Expr::parse(text, Dims::new(state_dim, 0))?;
        SmoothTestFunction::new(expr, state_dim)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn value(&self, s: f64, x: &[f64]) -> Result<f64> {
        self.expr.eval(&EvalPoint::new(s, x, 0.0, &[]))
    }

    pub fn time_derivative(&self, s: f64, x: &[f64]) -> Result<f64> {
        self.time_derivative.eval(&EvalPoint::new(s, x, 0.0, &[]))
    }

    pub fn gradient(&self, s: f64, x: &[f64]) -> Result<DVector<f64>> {
        let p = EvalPoint::new(s, x, 0.0, &[]);
        let mut out = DVector::zeros(self.state_dim);
        for (i, e) in self.gradient.iter().enumerate() {
            out[i] = e.eval(&p)?;
        }
        Ok(out)
    }

    pub fn hessian(&self, s: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        let p = EvalPoint::new(s, x, 0.0, &[]);
        let mut out = DMatrix::zeros(self.state_dim, self.state_dim);
        for i in 0..self.state_dim {
            for j in 0..self.state_dim {
                out[(i, j)] = self.hessian[i][j].eval(&p)?;
            }
        }
        // symmetrize against rounding in the two differentiation orders
        let sym = (&out + out.transpose()) * 0.5;
        Ok(sym)
    }

    /// Compares the symbolic derivatives against central finite differences
    /// at 50 random points; deviations above 1e-6 are an error.
    pub fn validate_derivatives(
        &self,
        time_range: (f64, f64),
        state_box: &[(f64, f64)],
        seed: u64,
    ) -> Result<()> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let step = 1e-5;
        for _ in 0..50 {
            let s = rng.random_range(time_range.0..time_range.1.max(time_range.0 + 1e-9));
            let x: Vec<f64> = state_box
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..hi))
                .collect();
            let fd_t = (self.value(s + step, &x)? - self.value(s - step, &x)?) / (2.0 * step);
            let sym_t = self.time_derivative(s, &x)?;
            if (fd_t - sym_t).abs() > 1e-6 {
                return Err(Error::Evaluation {
                    context: "test function time derivative".into(),
                    message: format!("symbolic {sym_t} vs finite difference {fd_t}"),
                });
            }
            let grad = self.gradient(s, &x)?;
            for i in 0..self.state_dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step;
                xm[i] -= step;
                let fd = (self.value(s, &xp)? - self.value(s, &xm)?) / (2.0 * step);
                if (fd - grad[i]).abs() > 1e-6 {
                    return Err(Error::Evaluation {
                        context: "test function gradient".into(),
                        message: format!("axis {i}: symbolic {} vs fd {fd}", grad[i]),
                    });
                }
            }
            let hess = self.hessian(s, &x)?;
            for i in 0..self.state_dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step;
                xm[i] -= step;
                let gp = self.gradient(s, &xp)?;
                let gm = self.gradient(s, &xm)?;
                for j in 0..self.state_dim {
                    let fd = (gp[j] - gm[j]) / (2.0 * step);
                    if (fd - hess[(i, j)]).abs() > 1e-6 {
                        return Err(Error::Evaluation {
                            context: "test function hessian".into(),
                            message: format!(
                                "entry ({i},{j}): symbolic {} vs fd {fd}",
                                hess[(i, j)]
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}
