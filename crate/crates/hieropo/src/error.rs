//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: dimension mismatch, expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("{what} is not symmetric positive definite")]
    NotPositiveDefinite { what: String },

    #[error("{what} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { what: String, asymmetry: f64 },

    #[error("invalid {what}: {message}")]
    InvalidParameter { what: String, message: String },

    #[error("record {index}: task id {task_id} outside 1..={m}")]
    TaskOutOfRange {
        index: usize,
        task_id: usize,
        m: usize,
    },

    #[error("record {index}: feature norm {norm} exceeds 1")]
    FeatureNormExceeded { index: usize, norm: f64 },

    #[error("slate has no actions")]
    EmptySlate,

    #[error("joint oracle size {size} exceeds limit {limit}")]
    OracleTooLarge { size: usize, limit: usize },

    #[error("learner '{learner}' requires the environment ground truth (pass an env file)")]
    MissingGroundTruth { learner: String },

    #[error("chosen cluster has {size} users, need at least {required}")]
    ClusterTooSmall { size: usize, required: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            what: what.into(),
            message: message.into(),
        }
    }

    /// Attach a pipeline stage name to an error.
    pub fn stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// Extension for tagging errors with the pipeline stage that produced them.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.stage(stage))
    }
}
