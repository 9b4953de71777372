//! One-dimensional biased Mott variable-range hopping: environments, jump
//! kernels, walk simulation, resistor networks, exact finite-chain oracles
//! and Monte Carlo estimators.

pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod kernel;
pub mod mc;
pub mod network;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
