//! Identification of simulator dynamics-parameter distributions from torque
//! trajectories, and domain-randomized policy training on the identified
//! distribution, on a planar arm + hinged door testbed.

pub mod cmaes;
pub mod error;
pub mod eval;
pub mod harness;
pub mod identify;
pub mod rl;
pub mod sim;

pub use error::{Error, Result};
