//! Penalization scheme for systems of reflected quasilinear stochastic PDEs
//! in a convex value domain `D ⊂ ℝ^k`, on a periodic spatial grid.
//!
//! The crate is `no_std` with `alloc`. It covers:
//!
//! * [`domain`]: the convex constraint set, its projection and the
//!   structural inequalities of the projection;
//! * [`coefficients`]: problem data, assumption checks and the reduction of
//!   a general divergence-form operator to `½Δ`;
//! * [`paths`]: Brownian paths, the translation flow and the stochastic
//!   quadratures (backward Itô, forward–backward `∗dB`);
//! * [`solver`]: the backward penalized scheme producing `u^n`, `∇u^n` and
//!   the reflection measure `ν_n`;
//! * [`bdsde`]: the triple `(Y, Z, K)` along flow paths and its residual,
//!   minimality and moment diagnostics;
//! * [`weak_form`]: variational residuals with deterministic and random
//!   test functions;
//! * [`lab`]: penalty sweeps, rates, Cauchy gaps and the measure/path
//!   duality check.
//!
//! IO, configuration files and the command line live in the `rspde` crate.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bdsde;
pub mod coefficients;
pub mod domain;
mod error;
pub mod grid;
mod heat;
pub mod lab;
mod linalg;
pub mod paths;
mod smooth;
pub mod solver;
pub mod stats;
pub mod weak_form;

pub use error::{Error, Result};
