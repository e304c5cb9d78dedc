use std::path::PathBuf;

use thiserror::Error;

/// A rejected configuration, pointing at the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    /// Dotted path of the field (`optimizer.alpha`), or `document` for
    /// syntax errors.
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error in {field}: {message}")]
    Config { field: String, message: String },

    #[error("numerical failure in run {run} at step {step}: {message}")]
    Numerical { run: String, step: usize, message: String },

    #[error("acceptance check failed: {0}")]
    Acceptance(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed trace {path}: {message}")]
    Trace { path: PathBuf, message: String },
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn numerical(run: impl Into<String>, step: usize, err: &samlab_core::Error) -> Self {
        // the step is already part of this variant's message
        let message = match err {
            samlab_core::Error::AtStep { source, .. } => source.to_string(),
            e => e.to_string(),
        };
        Self::Numerical {
            run: run.into(),
            step,
            message,
        }
    }

    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Numerical { .. } => 3,
            Self::Acceptance(_) => 4,
            Self::Io { .. } | Self::Trace { .. } => 1,
        }
    }
}

impl From<ConfigError> for HarnessError {
    fn from(e: ConfigError) -> Self {
        Self::Config {
            field: e.field,
            message: e.message,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
