//! Discrete solver for the coupled p-Laplacian system
//!
//! ```text
//! -Δ_p u + A φ^(θ+1) |u|^(r-2) u = f,    -Δ_p φ = |u|^r φ^θ
//! ```
//!
//! on a box with homogeneous Dirichlet conditions, by alternating two convex
//! or variational sub-problems.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod energy;
pub mod error;
pub mod exponents;
pub mod fixedpoint;
pub mod grid;
pub mod optimize;
pub mod subsolvers;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grids.md")]
    mod grids {}
    #[doc = include_str!("../../../book/src/energies.md")]
    mod energies {}
    #[doc = include_str!("../../../book/src/subproblems.md")]
    mod subproblems {}
    #[doc = include_str!("../../../book/src/fixed_point.md")]
    mod fixed_point {}
    #[doc = include_str!("../../../book/src/exponents.md")]
    mod exponents {}
    #[doc = include_str!("../../../book/src/regularizing.md")]
    mod regularizing {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
