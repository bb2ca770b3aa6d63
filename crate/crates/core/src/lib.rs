//! Average age of information and mean-field offloading equilibria for
//! multi-access edge computing networks.
//!
//! * [`shs`] solves piecewise-linear stochastic hybrid system age models.
//! * [`mec`] instantiates the device/transmitter/edge-server network, its
//!   closed-form mean-field age and the device cost.
//! * [`des`] is an event-driven simulator used as an independent oracle.
//! * [`mfe`] computes the mean-field equilibrium by damped fixed-point
//!   iteration over per-type best responses.
//! * [`game`] analyses the finite-N game: best responses, best-response
//!   dynamics and exploitability of the mean-field policy.

// Negated comparisons below deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod des;
pub mod error;
pub mod game;
mod linalg;
pub mod mec;
pub mod mfe;
pub mod optimize;
pub mod shs;

pub use error::{Error, Result};
pub use mec::{CostPairing, DeviceParams, EsEnvironment, Policy, SystemParams};
