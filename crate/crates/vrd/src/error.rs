use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VrdError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        msg: String,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown category '{0}' (not present in embedding table)")]
    UnknownCategory(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<VrdError>,
    },
}

impl VrdError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VrdError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        VrdError::Parse {
            path: path.into(),
            line: None,
            msg: msg.into(),
        }
    }

    pub fn parse_line(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        VrdError::Parse {
            path: path.into(),
            line: Some(line),
            msg: msg.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        VrdError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 for input problems, 3 for config problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            VrdError::Config(_) => 3,
            VrdError::Context { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, VrdError>;
