//! The mdbook guide, compiled as doc-tests.
//!
//! Every chapter under `book/src/` is attached to a module below, so each
//! fenced Rust block in the book is compiled and executed by
//! `cargo test --doc`. The book cannot drift from the crate without a test
//! failure.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/generators.md")]
pub mod generators {}

#[doc = include_str!("../../../book/src/lattice.md")]
pub mod lattice_operator {}

#[doc = include_str!("../../../book/src/control.md")]
pub mod value_iteration {}

#[doc = include_str!("../../../book/src/hjb.md")]
pub mod finite_differences {}

#[doc = include_str!("../../../book/src/validation.md")]
pub mod validation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod command_line {}
