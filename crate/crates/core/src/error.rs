use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up. `axis` names the offending axis.
    #[error("shape error in {op}: {axis} mismatch ({detail})")]
    Shape {
        op: &'static str,
        axis: &'static str,
        detail: String,
    },

    /// Invalid configuration value. `key` is the config key at fault.
    #[error("config error: `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// Malformed or corrupt input data (annotation files, checkpoints, images).
    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error in field `{field}`: {reason}")]
    Checkpoint { field: String, reason: String },

    /// Non-finite value detected during training or inference.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, axis: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            axis,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn checkpoint(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Checkpoint {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 2 for configuration errors, 3 for data/checkpoint/io errors,
    /// 4 for numeric failures. Shape errors surface as 2 because they can
    /// only arise from an inconsistent model configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Shape { .. } => 2,
            Error::Data(_) | Error::Checkpoint { .. } | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }
}
