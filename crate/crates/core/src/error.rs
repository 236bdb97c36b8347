use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
///
/// Variants split roughly into validation problems (bad shapes, bad input
/// files, bad configuration) and runtime failures (IO, numerical blow-ups).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("audio error in {path}: {detail}")]
    Audio { path: PathBuf, detail: String },

    #[error("manifest {path}, row {row}: {detail}")]
    Manifest {
        path: PathBuf,
        row: usize,
        detail: String,
    },

    #[error("tensor container: {0}")]
    Container(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("report: {0}")]
    Report(String),

    #[error("training aborted in run {run}, fold {fold}: {detail}")]
    Training {
        run: usize,
        fold: usize,
        detail: String,
    },

    #[error("gradient check failed for parameter `{name}`: max rel. error {max_rel_err:.3e} > {tolerance:.1e}")]
    GradCheck {
        name: String,
        max_rel_err: f64,
        tolerance: f64,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. }
                | Error::NonFinite(_)
                | Error::Training { .. }
                | Error::GradCheck { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
