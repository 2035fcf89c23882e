use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),

    #[error("label {label} at frame {frame} is out of range for {classes} classes")]
    LabelOutOfRange {
        label: usize,
        frame: usize,
        classes: usize,
    },

    #[error("checkpoint has {model} classes but the dataset mapping has {dataset}")]
    ClassMismatch { model: usize, dataset: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}: bad magic bytes (expected {expected:?})")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated payload ({detail})")]
    Truncated { path: PathBuf, detail: String },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("video `{video}`: {detail}")]
    Video { video: String, detail: String },

    #[error("training diverged at epoch {epoch}, video `{video}`: loss is {loss}")]
    Divergence {
        epoch: usize,
        video: String,
        loss: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by input data rather than usage or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::LabelOutOfRange { .. }
                | Error::ClassMismatch { .. }
                | Error::BadMagic { .. }
                | Error::VersionMismatch { .. }
                | Error::Truncated { .. }
                | Error::Format { .. }
                | Error::Video { .. }
                | Error::Io { .. }
                | Error::Empty(_)
                | Error::Dimension { .. }
        )
    }
}
