use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid range: lo = {lo} > hi = {hi}")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("invalid label {value:?} in {context}")]
    InvalidLabel { value: String, context: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("layer {index} ({kind}): {message}")]
    Layer {
        index: usize,
        kind: &'static str,
        message: String,
    },

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidParam(_)
            | Error::InvalidRange { .. }
            | Error::Json(_) => 2,
            Error::Divergence(_) => 4,
            _ => 3,
        }
    }
}
