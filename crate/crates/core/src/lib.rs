//! Hellinger-Kantorovich distances between finite measures and the
//! minimizing-movement scheme for scalar reaction-diffusion equations
//!
//! `du/dt = lambda div(u grad(F'(u) + V)) - sigma (F'(u) + V) u`
//!
//! with no-flux boundary conditions.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cone;
pub mod energy;
pub mod error;
pub mod hk;
pub mod jko;
pub mod measures;
pub mod par;
mod scaling;
pub mod subdiff;
pub mod verification;

pub use error::{Error, Result};
