use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: operand `{operand}` {detail}")]
    Shape {
        op: &'static str,
        operand: &'static str,
        detail: String,
    },
    #[error("non-finite value produced by {op} (shape {shape})")]
    NonFinite { op: &'static str, shape: Shape },
    #[error("backward called on a non-scalar root of shape {0}")]
    NonScalarRoot(Shape),
    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("bad magic in tensor file {path:?}")]
    BadMagic { path: PathBuf },
    #[error("unsupported tensor file version {version} in {path:?}")]
    UnsupportedVersion { path: PathBuf, version: u8 },
    #[error("unsupported tensor dtype code {dtype} in {path:?}")]
    UnsupportedDtype { path: PathBuf, dtype: u8 },
    #[error("truncated tensor file {path:?}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, operand: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            operand,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI's single-line error output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::NonScalarRoot(_) | Error::GraphConsumed => "autograd",
            Error::Invalid(_) => "invalid_argument",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::UnsupportedDtype { .. } => "unsupported_dtype",
            Error::Truncated { .. } => "truncated",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}
