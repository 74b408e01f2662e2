//! Simulation and two-step composite likelihood estimation for stationary
//! determinantal point processes.

pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod inference;
pub mod kernel;
pub mod optimize;
pub mod patterns;
pub mod quadrature;
pub mod sampler;

pub use error::{DppError, Result};
