use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SabrError> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by [`ErrorKind`] so a driver can map them to exit codes.
#[derive(Debug, Error)]
pub enum SabrError {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dimension {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed input {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("unsupported operation: {0}")]
    Capability(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<SabrError>,
    },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

impl SabrError {
    pub fn dim(op: &'static str, left: impl Into<String>, right: impl Into<String>) -> Self {
        SabrError::Dimension {
            op,
            left: left.into(),
            right: right.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        SabrError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SabrError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        match self {
            // keep the innermost stage name
            s @ SabrError::Stage { .. } => s,
            other => SabrError::Stage {
                stage: stage.into(),
                source: Box::new(other),
            },
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            SabrError::Config(_) => ErrorKind::Config,
            SabrError::Format { .. } | SabrError::Data(_) | SabrError::Io { .. } => ErrorKind::Data,
            SabrError::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Runtime,
        }
    }
}
