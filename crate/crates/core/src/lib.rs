//! Random uniformly expanding circle maps over a bilateral Bernoulli shift.
//!
//! The crate builds fiberwise transfer operators on uniform grids, computes
//! conformal measures, eigenvalue chains and invariant densities by pullback
//! and pushforward along the base orbit, and runs Monte Carlo probes of the
//! limit laws of Birkhoff sums.

pub mod base;
pub mod bounds;
pub mod cone;
pub mod error;
pub mod fiber;
pub mod grid;
pub mod limits;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod thermo;
pub mod transfer;
pub mod trig;

pub use error::{Error, Result};
