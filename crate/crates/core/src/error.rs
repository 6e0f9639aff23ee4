use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the benchmark pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot ingest {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("cannot label {file}: {reason}")]
    Labeling { file: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("split error for subject {subject}: {reason}")]
    Split { subject: u32, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no convergence after {iterations} iterations (final delta {delta:.3e})")]
    Convergence { iterations: usize, delta: f64 },

    #[error("requested {requested} dimensions but only {attainable} are attainable")]
    Rank { requested: usize, attainable: usize },

    #[error("discriminant analysis: {0}")]
    Discriminant(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("learning rate {rate} diverged at iteration {iteration}")]
    LearningRate { rate: f64, iteration: usize },

    #[error("metric: {0}")]
    Metric(String),

    #[error("fusion: {0}")]
    Fusion(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("config: {0}")]
    Config(String),

    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serialization(String),

    #[error("[{algorithm}/{stage}] {source}")]
    Stage {
        algorithm: String,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the algorithm and pipeline stage that produced it.
    pub fn at_stage(self, algorithm: &str, stage: &'static str) -> Self {
        Error::Stage {
            algorithm: algorithm.to_string(),
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
