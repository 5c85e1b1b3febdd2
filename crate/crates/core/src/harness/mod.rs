//! Batch orchestration: configuration, seeded experiments, result files,
//! external price ingestion and model-versus-data comparison.

pub mod compare;
pub mod config;
pub mod experiment;
pub mod ingest;

use std::path::PathBuf;

use thiserror::Error;

use crate::curves::CurveError;
use crate::engine::EngineError;
use crate::population::PopulationError;
use crate::stats::StatsError;

pub use compare::{compare, tail_slope, ComparisonReport, CompareError, TailFit};
pub use config::{parse_config, ConfigError, ExperimentConfig, RunOptions};
pub use experiment::{
    audit_output, read_trajectory, initial_curves, run_experiment, run_experiment_with, summarize_trajectory,
    ExperimentSummary, SessionSummary, TrajectorySummary,
};
pub use ingest::{ingest_prices, parse_prices, ColumnSelector, ExternalPriceSeries, IngestError};

/// Coarse failure class, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Data,
    Simulation,
}

impl ErrorCategory {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Data => 4,
            ErrorCategory::Simulation => 5,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error("session {session}: {source}")]
    Engine {
        session: usize,
        #[source]
        source: EngineError,
    },
    #[error("session {session}: {source}")]
    Curve {
        session: usize,
        #[source]
        source: CurveError,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("cannot start worker pool: {0}")]
    ThreadPool(String),
}

impl HarnessError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            HarnessError::Config(_) | HarnessError::Population(_) => ErrorCategory::Config,
            HarnessError::Engine { .. } => ErrorCategory::Simulation,
            HarnessError::Io { .. } | HarnessError::ThreadPool(_) => ErrorCategory::Io,
            HarnessError::Ingest(IngestError::Read { .. }) => ErrorCategory::Io,
            HarnessError::Csv { source, .. } if source.is_io_error() => ErrorCategory::Io,
            HarnessError::Stats(_)
            | HarnessError::Curve { .. }
            | HarnessError::Ingest(_)
            | HarnessError::Compare(_)
            | HarnessError::Csv { .. }
            | HarnessError::Format { .. } => ErrorCategory::Data,
        }
    }
}
