//! Off-policy evaluation for confounded POMDPs.
//!
//! The crate builds bridge-function estimators of a target policy's value from
//! behavior data whose actions depend on an unobserved latent state, together
//! with the simulators and exact oracles needed to check them.

pub mod dr;
pub mod environments;
pub mod error;
pub mod features;
pub mod harness;
pub mod identification;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod linear;
pub mod model;
pub mod rng;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};
