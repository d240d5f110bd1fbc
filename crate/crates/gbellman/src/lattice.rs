//! One-step nonlinear conditional expectation on a grid.
//!
//! For a grid function φ, a step Δ, a penalized covariance family and an
//! increment quadrature, the one-step operator is
//!
//! ```text
//! (T φ)(x) = max_i [ Σ_q w_q φ̂(x + √Δ L_i ξ_q)  -  Δ c_i ]
//! ```
//!
//! with φ̂ the clamped multilinear interpolant of φ. The operator is
//! monotone, maps constants to constants (the zero-penalty atom), and its
//! action on quadratics recovers the generator: for φ = ½⟨Ax, x⟩ one step
//! gains Δ·g~(A) at the origin, the discrete form of the quadratic-variation
//! identity E~[⟨A B_Δ, B_Δ⟩] = g~(2A)·Δ.

use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::grid::GridFunction;
use crate::quad::Quadrature;
use nalgebra::DVector;
use rayon::prelude::*;

/// Applies the one-step operator to `phi`.
///
/// The reduction order is fixed (atoms then quadrature nodes, ascending), so
/// results are identical regardless of how the point loop is partitioned.
pub fn one_step_expectation(
    phi: &GridFunction,
    dt: f64,
    gen: &Generator,
    quad: &Quadrature,
) -> Result<GridFunction> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::NonPositiveStep(dt));
    }
    let dim = phi.grid().dim();
    if gen.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: gen.dim(),
            context: "generator vs grid",
        });
    }
    if quad.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: quad.dim(),
            context: "quadrature vs grid",
        });
    }

    // per-(atom, node) displacement √Δ L_i ξ_q
    let sqrt_dt = dt.sqrt();
    let displacements: Vec<Vec<DVector<f64>>> = gen
        .atoms()
        .iter()
        .map(|atom| {
            quad.nodes()
                .iter()
                .map(|xi| atom.factor() * xi * sqrt_dt)
                .collect()
        })
        .collect();

    let grid = phi.grid().clone();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let x = grid.point(flat);
            let mut best = f64::NEG_INFINITY;
            for (atom, offsets) in gen.atoms().iter().zip(displacements.iter()) {
                let mut acc = 0.0;
                for (offset, w) in offsets.iter().zip(quad.weights().iter()) {
                    acc += w * phi.interpolate(&(&x + offset));
                }
                best = best.max(acc - dt * atom.penalty());
            }
            best
        })
        .collect();
    GridFunction::new(grid, values)
}
