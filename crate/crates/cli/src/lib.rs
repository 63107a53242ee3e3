//! Experiment harness: seeded scenario generation, solver runs, parameter
//! sweeps and summary tables with bootstrap confidence intervals.

pub mod compare;
pub mod config;
pub mod experiment;
pub mod stats;

pub use config::{preset, Algorithm, ExperimentConfig, SweepAxis};
pub use experiment::{run_experiment, ResultRow};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error("result schema: {0}")]
    Schema(String),
    #[error("statistics: {0}")]
    Stats(String),
    #[error(transparent)]
    Core(#[from] cellsleep_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
