use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{sources} sources do not fit in {outputs} outputs")]
    Capacity { sources: usize, outputs: usize },

    #[error("at least one valid target is required")]
    EmptyTargets,

    #[error(
        "brute-force assignment is limited to {max} outputs, got {n}; use the Hungarian solver"
    )]
    Size { n: usize, max: usize },

    #[error("invalid value: {0}")]
    Value(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
