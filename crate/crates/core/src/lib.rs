//! Cournot-Nash equilibria of anonymous games on an interval, computed as
//! minimizers of an optimal transport cost plus an energy.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod measures;
pub mod solver;
pub mod transport;
pub mod verify;
pub mod welfare;

pub use error::{Error, Result};
