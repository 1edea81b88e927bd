use std::path::PathBuf;

use elf_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    /// A configuration value is invalid or unsupported.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite values after {stage}: {detail}")]
    NonFinite { stage: String, detail: String },

    #[error("split at `{layer}` falls inside residual block `{block}`; splits must sit on block boundaries")]
    SplitInsideBlock { layer: String, block: String },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("feature cache was extracted from a different synthetic set (cache {cached}, current {current})")]
    CacheMismatch { cached: String, current: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    /// A report needs cells that have no records.
    #[error("incomplete grid, missing cells: {}", .missing.join("; "))]
    IncompleteGrid { missing: Vec<String> },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

/// Attaches the offending path to an I/O error.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
