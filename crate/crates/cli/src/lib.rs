//! Experiment harness behind the `bench` binary.

pub mod config;
pub mod experiments;
pub mod instances;
pub mod output;
pub mod stats;

use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig, Method, RankModeSetting};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: std::path::PathBuf,
        source: csv::Error,
    },
    #[error("numerical failure: {0}")]
    Numerical(#[from] lrsense_core::Error),
}

impl BenchError {
    /// Process exit code: 1 for configuration and I/O problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Numerical(_) => 2,
            _ => 1,
        }
    }
}
