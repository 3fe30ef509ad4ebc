//! Hysteresis no-trade-zone model.
//!
//! A raw Gaussian signal is smoothed by an exponential moving average into an
//! AR(1) process, and a long/short position flips only when the smoothed
//! signal crosses the opposite threshold. The crate computes the
//! position-return correlation `K(α, η)`, the expected holding time
//! `H(α, η)`, and checks that `α = 0` is a constrained local maximum of `H`
//! along the level curves of `K`.

pub mod cli;
pub mod closed_forms;
pub mod error;
pub mod gaussian;
pub mod optimizer;
pub mod oracles;
pub mod process;
pub mod quadrature;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
