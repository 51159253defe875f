//! Numerical laboratory for ergodic BSDEs driven by weakly dissipative
//! diffusions: forward simulation, grid and Monte Carlo BSDE solvers, the
//! vanishing-discount construction of `(lambda, v, zeta)`, large-time
//! diagnostics and the ergodic control layer.

// `!(a < b)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde_mc;
pub mod control;
pub mod ebsde;
pub mod error;
pub mod large_time;
pub mod model;
pub mod numerics;
pub mod pde_solver;
pub mod rng;
pub mod sde_sim;
pub mod semigroup;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
