//! Problem configuration: a single JSON document describing the generator,
//! the coefficient expressions, the control set, the grids and the solver
//! options. Loading validates everything; every violation maps to a distinct
//! diagnostic code.

use crate::error::{Error, Result};
use crate::expr::{Dims, Expr};
use crate::generator::Generator;
use crate::grid::{Axis, SpaceGrid, TimeGrid};
use crate::hjb::{scheme_geometry, HamiltonianContext};
use crate::problem::{ControlProblem, ProblemParts, SampleRanges};
use crate::quad::Quadrature;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub dimensions: DimensionsConfig,
    pub generator: GeneratorConfig,
    pub coefficients: CoefficientsConfig,
    pub control_set: ControlSetConfig,
    pub lipschitz: f64,
    pub grids: GridsConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionsConfig {
    pub state: usize,
    pub noise: usize,
    pub control: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub sigma_min: f64,
    pub atoms: Vec<AtomConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomConfig {
    /// Row-major d×d covariance entries.
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub penalty: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientsConfig {
    pub drift: Vec<String>,
    /// d×d matrix of n-vectors; omitted means identically zero.
    #[serde(default)]
    pub qv_drift: Option<Vec<Vec<Vec<String>>>>,
    pub diffusion: Vec<Vec<String>>,
    #[serde(default = "zero_string")]
    pub running_cost: String,
    /// d×d scalar matrix; omitted means identically zero.
    #[serde(default)]
    pub qv_cost: Option<Vec<Vec<String>>>,
    pub terminal: String,
}

fn zero_string() -> String {
    "0".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlSetConfig {
    /// Per-axis [lo, hi] bounds of the compact control box.
    pub bounds: Vec<[f64; 2]>,
    /// Grid points per control axis (1 collapses the axis to its lower bound).
    pub points_per_axis: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridsConfig {
    pub space: Vec<SpaceAxisConfig>,
    pub time: TimeConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceAxisConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeConfig {
    #[serde(default)]
    pub t0: f64,
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default = "default_picard")]
    pub picard_iters: usize,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_picard() -> usize {
    1
}

fn default_seed() -> u64 {
    0x9b1e
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            picard_iters: default_picard(),
            quadrature: QuadratureConfig::default(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum QuadratureConfig {
    /// Tensor Gauss–Hermite with `points` nodes per axis.
    Gauss { points: usize },
    /// Symmetric three-point rule with the given spread per axis.
    Ternary { spread: f64 },
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig::Gauss { points: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default = "default_surface_name")]
    pub surface: String,
    #[serde(default = "default_report_name")]
    pub report: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            surface: default_surface_name(),
            report: default_report_name(),
        }
    }
}

fn default_surface_name() -> String {
    "surface.csv".to_string()
}

fn default_report_name() -> String {
    "report.json".to_string()
}

/// A fully validated problem ready for the solvers.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub name: String,
    pub problem: ControlProblem,
    pub generator: Generator,
    pub quadrature: Quadrature,
    pub tgrid: TimeGrid,
    pub sgrid: SpaceGrid,
    pub picard_iters: usize,
    pub seed: u64,
    pub surface_path: String,
    pub report_path: String,
}

impl LoadedProblem {
    pub fn sample_ranges(&self) -> SampleRanges {
        SampleRanges {
            time: (self.tgrid.t0, self.tgrid.horizon),
            state: self.sgrid.axes().iter().map(|a| (a.lo, a.hi)).collect(),
            value: (-20.0, 20.0),
            control: self.problem.control_box().to_vec(),
        }
    }
}

/// Reads and fully validates a config file.
pub fn load_config(path: &Path) -> Result<LoadedProblem> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let config: ProblemConfig = serde_json::from_str(&text)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "problem".to_string());
    build(&config, name)
}

/// Validates a parsed config and assembles the runtime objects.
pub fn build(config: &ProblemConfig, name: String) -> Result<LoadedProblem> {
    let n = config.dimensions.state;
    let d = config.dimensions.noise;
    let m = config.dimensions.control;
    for (label, v) in [("state", n), ("noise", d), ("control", m)] {
        if v == 0 {
            return Err(Error::BadConfig {
                field: format!("dimensions.{label}"),
                message: "must be at least 1".into(),
            });
        }
    }

    // generator
    let mut atoms = Vec::with_capacity(config.generator.atoms.len());
    for (i, atom) in config.generator.atoms.iter().enumerate() {
        if atom.sigma.len() != d * d {
            return Err(Error::BadConfig {
                field: format!("generator.atoms[{i}].sigma"),
                message: format!(
                    "expected {} row-major entries, got {}",
                    d * d,
                    atom.sigma.len()
                ),
            });
        }
        atoms.push((DMatrix::from_row_slice(d, d, &atom.sigma), atom.penalty));
    }
    let generator = Generator::new(d, config.generator.sigma_min, atoms)?;

    // coefficient expressions
    let dims = Dims::new(n, m);
    let parse_named = |text: &str, field: String| -> Result<Expr> {
        Expr::parse(text, dims).map_err(|e| match e {
            Error::Parse { offset, message } => Error::BadConfig {
                field,
                message: format!("parse error at byte {offset}: {message}"),
            },
            Error::UnknownIdentifier { name, offset } => Error::BadConfig {
                field,
                message: format!("unknown identifier `{name}` at byte {offset}"),
            },
            other => other,
        })
    };
    if config.coefficients.drift.len() != n {
        return Err(Error::BadConfig {
            field: "coefficients.drift".into(),
            message: format!("expected {n} entries"),
        });
    }
    let drift = config
        .coefficients
        .drift
        .iter()
        .enumerate()
        .map(|(i, s)| parse_named(s, format!("coefficients.drift[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let qv_drift = match &config.coefficients.qv_drift {
        None => vec![vec![vec![Expr::Const(0.0); n]; d]; d],
        Some(rows) => {
            let mut out = Vec::with_capacity(d);
            if rows.len() != d {
                return Err(Error::BadConfig {
                    field: "coefficients.qv_drift".into(),
                    message: format!("expected {d} rows"),
                });
            }
            for (j, row) in rows.iter().enumerate() {
                if row.len() != d {
                    return Err(Error::BadConfig {
                        field: format!("coefficients.qv_drift[{j}]"),
                        message: format!("expected {d} columns"),
                    });
                }
                let mut out_row = Vec::with_capacity(d);
                for (k, entry) in row.iter().enumerate() {
                    if entry.len() != n {
                        return Err(Error::BadConfig {
                            field: format!("coefficients.qv_drift[{j}][{k}]"),
                            message: format!("expected {n} components"),
                        });
                    }
                    out_row.push(
                        entry
                            .iter()
                            .enumerate()
                            .map(|(i, s)| {
                                parse_named(s, format!("coefficients.qv_drift[{j}][{k}][{i}]"))
                            })
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
                out.push(out_row);
            }
            out
        }
    };
    if config.coefficients.diffusion.len() != n
        || config.coefficients.diffusion.iter().any(|r| r.len() != d)
    {
        return Err(Error::BadConfig {
            field: "coefficients.diffusion".into(),
            message: format!("expected an {n}×{d} matrix"),
        });
    }
    let diffusion = config
        .coefficients
        .diffusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, s)| parse_named(s, format!("coefficients.diffusion[{i}][{j}]")))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let running_cost = parse_named(
        &config.coefficients.running_cost,
        "coefficients.running_cost".into(),
    )?;
    let qv_cost = match &config.coefficients.qv_cost {
        None => vec![vec![Expr::Const(0.0); d]; d],
        Some(rows) => {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::BadConfig {
                    field: "coefficients.qv_cost".into(),
                    message: format!("expected a {d}×{d} matrix"),
                });
            }
            rows.iter()
                .enumerate()
                .map(|(j, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(k, s)| parse_named(s, format!("coefficients.qv_cost[{j}][{k}]")))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let terminal = parse_named(
        &config.coefficients.terminal,
        "coefficients.terminal".into(),
    )?;

    // control grid from box × points
    if config.control_set.bounds.len() != m || config.control_set.points_per_axis.len() != m {
        return Err(Error::BadConfig {
            field: "control_set".into(),
            message: format!("bounds and points_per_axis must each have {m} entries"),
        });
    }
    let control_box: Vec<(f64, f64)> = config
        .control_set
        .bounds
        .iter()
        .map(|b| (b[0], b[1]))
        .collect();
    for (i, &(lo, hi)) in control_box.iter().enumerate() {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::BadConfig {
                field: format!("control_set.bounds[{i}]"),
                message: format!("bad interval [{lo}, {hi}]"),
            });
        }
    }
    let mut per_axis: Vec<Vec<f64>> = Vec::with_capacity(m);
    for (axis, &count) in config.control_set.points_per_axis.iter().enumerate() {
        if count == 0 {
            return Err(Error::BadConfig {
                field: format!("control_set.points_per_axis[{axis}]"),
                message: "must be at least 1".into(),
            });
        }
        let (lo, hi) = control_box[axis];
        let vals = if count == 1 {
            vec![lo]
        } else {
            (0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                .collect()
        };
        per_axis.push(vals);
    }
    let total: usize = per_axis.iter().map(Vec::len).product();
    let mut controls = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rest = flat;
        let mut point = DVector::zeros(m);
        for axis in (0..m).rev() {
            let k = per_axis[axis].len();
            point[axis] = per_axis[axis][rest % k];
            rest /= k;
        }
        controls.push(point);
    }

    let problem = ControlProblem::new(ProblemParts {
        state_dim: n,
        noise_dim: d,
        control_dim: m,
        drift,
        qv_drift,
        diffusion,
        running_cost,
        qv_cost,
        terminal,
        controls,
        control_box,
        lipschitz: config.lipschitz,
    })?;

    // grids
    if config.grids.space.len() != n {
        return Err(Error::BadConfig {
            field: "grids.space".into(),
            message: format!("expected {n} axes"),
        });
    }
    let axes = config
        .grids
        .space
        .iter()
        .map(|a| Axis::new(a.lo, a.hi, a.points))
        .collect::<Result<Vec<_>>>()?;
    let sgrid = SpaceGrid::new(axes)?;
    let tgrid = TimeGrid::new(
        config.grids.time.t0,
        config.grids.time.horizon,
        config.grids.time.steps,
    )?;

    // solver options
    if config.solver.picard_iters == 0 {
        return Err(Error::BadPicard(config.solver.picard_iters));
    }
    let quadrature = match config.solver.quadrature {
        QuadratureConfig::Gauss { points } => Quadrature::gauss_hermite(d, points)?,
        QuadratureConfig::Ternary { spread } => Quadrature::scaled_ternary(d, spread)?,
    };

    let loaded = LoadedProblem {
        name,
        problem,
        generator,
        quadrature,
        tgrid,
        sgrid,
        picard_iters: config.solver.picard_iters,
        seed: config.solver.seed,
        surface_path: config.output.surface.clone(),
        report_path: config.output.report.clone(),
    };

    // sampled structural checks
    loaded
        .problem
        .validate_sampled(&loaded.sample_ranges(), loaded.seed)?;

    // contraction and CFL prechecks
    let contraction = loaded.tgrid.dt() * loaded.problem.lipschitz();
    if contraction >= 1.0 {
        return Err(Error::ContractionViolated {
            product: contraction,
        });
    }
    let ctx = HamiltonianContext::new(&loaded.problem, &loaded.generator);
    let geometry = scheme_geometry(&ctx, &loaded.tgrid, &loaded.sgrid)?;
    if geometry.cfl_bound > geometry.cfl_limit {
        return Err(Error::CflViolation {
            bound: geometry.cfl_bound,
            spans: geometry.spans,
        });
    }
    Ok(loaded)
}
