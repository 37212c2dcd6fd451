//! ℓ1-penalized M-estimation and empirical-process experiments.

pub mod chaining;
pub mod cli;
pub mod emp_process;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod oracle;
pub mod rng;
pub mod sample;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
