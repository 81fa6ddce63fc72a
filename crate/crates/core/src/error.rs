use std::path::PathBuf;

use thiserror::Error;

use crate::network::{NodeId, Pair, TaskId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Model,
    Divergence,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("unknown task {0}")]
    UnknownTask(TaskId),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("node {node} is not interested in task {task}")]
    NotInterested { node: NodeId, task: TaskId },

    #[error("combination policy error: {0}")]
    Policy(String),

    #[error("missing exchanged estimate for {0}")]
    Exchange(Pair),

    #[error("pair {0} is not in the stacked index")]
    Index(Pair),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("SNR undefined for node {0}: zero noise variance")]
    UndefinedSnr(NodeId),

    #[error(
        "SNR calibration failed for node {node} after {attempts} draws: target [{lo}, {hi}] dB, \
         achievable range (-inf, {max_achievable:.3}) dB"
    )]
    Calibration {
        node: NodeId,
        lo: f64,
        hi: f64,
        max_achievable: f64,
        attempts: usize,
    },

    #[error("divergence at iteration {iteration}: non-finite estimate")]
    Divergence { iteration: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Calibration { .. } => ErrorCategory::Config,
            Error::Divergence { .. } => ErrorCategory::Divergence,
            Error::Io { .. } => ErrorCategory::Io,
            _ => ErrorCategory::Model,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
