//! Experiment driver for the rank-structured nonuniform-DFT solvers.
//!
//! The library half of the `nudft` binary: configuration handling in
//! [`config`], the experiment implementations and the randomized error
//! estimator in [`experiments`], CSV formatting in [`output`], and the
//! one-shot solve file formats in [`solve_io`]. The binary is a thin
//! argument-parsing layer over these functions, and the integration
//! tests drive them in-process.

pub mod config;
pub mod experiments;
pub mod output;
pub mod solve_io;

pub use config::{CaseKind, ConfigError, ExperimentConfig, ExperimentKind, Overrides};

/// Any failure an experiment or the one-shot solve can produce.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Problem(#[from] nudft_core::problem::ProblemError),
    #[error(transparent)]
    Solver(#[from] nudft_core::inudft::SolverError),
    #[error(transparent)]
    Iterative(#[from] nudft_core::iterative::IterativeError),
    #[error(transparent)]
    Transform(#[from] nudft_core::transforms::TransformError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad input: {0}")]
    Input(String),
}
