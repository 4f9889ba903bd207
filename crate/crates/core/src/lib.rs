//! Simulation and verification of performance-barrier event-triggered
//! output-feedback boundary control for 2×2 linear hyperbolic systems.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dynamics;
pub mod error;
pub mod grid;
pub mod harness;
pub mod kernels;
pub mod params;
pub mod transforms;
pub mod triggering;

pub use error::{Error, Result};
