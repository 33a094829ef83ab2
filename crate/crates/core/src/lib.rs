//! High-dimensional split-plot tests for repeated measures designs.

pub mod cli;
pub mod distributions;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod hypothesis;
pub mod io;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
