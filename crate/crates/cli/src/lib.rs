//! Reproducible experiment runner: JSON configs in, deterministic CSV, JSON
//! and binary path files out.

pub mod config;
pub mod error;
pub mod run;
pub mod suite;

pub use config::{Config, Verb};
pub use error::CliError;
pub use run::{execute, run, Outcome, RunRecord, Verdict};
