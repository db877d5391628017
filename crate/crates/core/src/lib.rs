//! Numerical laboratory for operator semistable Lévy processes: exact
//! exponent algebra, samplers for a constructible family of processes,
//! Monte-Carlo sojourn-time estimators and fractal-dimension estimators for
//! sample-path ranges.

pub mod error;
pub mod fracdim;
pub mod io;
pub mod linops;
pub mod points;
pub mod process;
pub mod rng;
pub mod sojourn;
pub mod stats;
pub mod zoo;

pub use error::{Error, Result};
