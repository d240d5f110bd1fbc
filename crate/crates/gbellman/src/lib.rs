//! Solvers for stochastic recursive optimal control under volatility
//! uncertainty, where the driving noise has an ambiguous covariance described
//! by a finite penalized family and expectations are taken under the induced
//! dominated nonlinear expectation.
//!
//! The crate computes the value function of such problems by two independent
//! routes and cross-validates them:
//!
//! * [`control`] — a discretized backward-semigroup value iteration on a
//!   quadrature lattice;
//! * [`hjb`] — a monotone explicit finite-difference scheme for the
//!   associated fully nonlinear HJB equation.
//!
//! Shared infrastructure lives in [`generator`] (penalized covariance
//! families), [`quad`]/[`grid`]/[`lattice`] (the one-step nonlinear
//! expectation operator), [`expr`] (the coefficient formula DSL) and
//! [`problem`] (validated problem definitions). The [`config`], [`checks`],
//! [`report`] and [`cli`] modules back the `gbellman` command-line binary.
//!
//! The mdbook guide under `book/` walks through the concepts; its code
//! snippets are compiled and run as doc-tests via the [`guide`] module.

// `!(x > 0)`-style guards are used on purpose: they reject NaN where the
// inverted comparison would let it through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod expr;
pub mod generator;
pub mod grid;
pub mod guide;
pub mod hjb;
pub mod lattice;
pub mod problem;
pub mod quad;
pub mod report;

pub use error::{Error, Result};
pub use expr::{Dims, EvalPoint, Expr};
pub use generator::{CovarianceAtom, Generator};
pub use grid::{Axis, GridFunction, SpaceGrid, TimeGrid};
pub use lattice::one_step_expectation;
pub use quad::Quadrature;
