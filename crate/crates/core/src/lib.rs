//! Delay analysis for the two-user uplink with non-orthogonal multiple access.
//!
//! The crate is organised bottom-up:
//!
//! * [`channel`]: Rayleigh block fading and the two-user Gaussian MAC rate region.
//! * [`csi`]: MMSE channel-estimation statistics and quantized estimate grids.
//! * [`errors`]: decoding-error and outage probabilities (closed forms and
//!   exact-model Monte Carlo oracles).
//! * [`snc`]: Mellin-transform stochastic network calculus, the delay kernel
//!   and the delay-violation bound.
//! * [`alloc`]: rate-adaptation optimizers (knapsack greedy for SIC, closed
//!   form for joint decoding, grid search for imperfect CSI) and the outer
//!   parameter search.
//! * [`sim`]: slot-level queueing simulation used to validate the bounds.
//! * [`experiment`]: scheme-level drivers (bounds, arrival-rate sweeps,
//!   error validation) used by the command-line tool.

pub mod alloc;
pub mod channel;
pub mod csi;
mod error;
pub mod errors;
pub mod experiment;
pub mod sim;
pub mod snc;
pub mod stats;

pub use error::{Error, Result};

/// Converts a value in decibels to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear power ratio to decibels.
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
