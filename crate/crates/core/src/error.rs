use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{kind} file is truncated: {detail}")]
    Truncated { kind: &'static str, detail: String },

    #[error("{kind} file has bad magic bytes {found:?}")]
    BadMagic { kind: &'static str, found: Vec<u8> },

    #[error("{kind} file CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    BadCrc {
        kind: &'static str,
        stored: u32,
        computed: u32,
    },

    #[error("{kind} file has unsupported version {version}")]
    UnsupportedVersion { kind: &'static str, version: u32 },

    #[error("malformed {kind} file: {detail}")]
    Malformed { kind: &'static str, detail: String },

    #[error("manifest row {row}: {detail}")]
    ManifestRow { row: usize, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
