//! Simulation and numerical checks for stochastic differential equations
//! whose coefficients are not Lipschitz.
//!
//! - [`model`]: the SDE abstraction and built-in examples.
//! - [`control`]: control functions `η_R`, `γ`, `γ_R`.
//! - [`noise`]: Brownian paths on nested dyadic grids.
//! - [`euler`]: the Euler scheme, truncation and coupled runs.
//! - [`conditions`]: sampled checks of the sufficient conditions.
//! - [`estimators`]: Monte Carlo statistics, moment bounds, test functions.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod control;
pub mod error;
pub mod estimators;
pub mod euler;
pub mod model;
pub mod noise;
pub mod quadrature;
pub mod scalar;

pub use error::{Result, SdeError};
