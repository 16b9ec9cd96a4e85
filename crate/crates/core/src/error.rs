use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The variants group into the exit-code families used by the CLI:
/// configuration problems, data/file problems and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value produced by `{op}`{}", node.map(|n| format!(" (node {n})")).unwrap_or_default())]
    NonFinite { op: String, node: Option<usize> },

    #[error("expected a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("training diverged: NaN or infinite loss at epoch {epoch} ({what})")]
    Diverged { what: String, epoch: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown experiment tag `{0}`")]
    UnknownExperiment(String),

    #[error("model file {path}: {reason}")]
    ModelFormat { path: PathBuf, reason: String },

    #[error("checksum mismatch: model file is corrupted")]
    Checksum,

    #[error("experiment mismatch: model was trained for `{found}`, expected `{expected}`")]
    ExperimentMismatch { expected: String, found: String },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("solver failure at t = {t}: {reason}")]
    Solver { t: f64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code for this error: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownExperiment(_) | Error::InvalidArgument(_) => 2,
            Error::ModelFormat { .. }
            | Error::Checksum
            | Error::ExperimentMismatch { .. }
            | Error::Data(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Shape { .. } => 3,
            Error::NonFinite { .. }
            | Error::NotScalar(_)
            | Error::Diverged { .. }
            | Error::Solver { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
