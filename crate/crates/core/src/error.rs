use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CobaError>;

#[derive(Debug, Error)]
pub enum CobaError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A loss or gradient value that cannot be used (NaN, infinite, negative).
    #[error("bad data{}: {msg}", row_suffix(*.row))]
    Data { row: Option<usize>, msg: String },

    #[error("ordering violation{}: {msg}", row_suffix(*.row))]
    Ordering { row: Option<usize>, msg: String },

    #[error("malformed input{}: {msg}", row_suffix(*.row))]
    Format { row: Option<usize>, msg: String },

    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn row_suffix(row: Option<usize>) -> String {
    match row {
        Some(r) => format!(" at row {r}"),
        None => String::new(),
    }
}

impl CobaError {
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        CobaError::Data { row: None, msg: msg.into() }
    }

    pub(crate) fn ordering(msg: impl Into<String>) -> Self {
        CobaError::Ordering { row: None, msg: msg.into() }
    }

    pub(crate) fn format_at(row: usize, msg: impl Into<String>) -> Self {
        CobaError::Format { row: Some(row), msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CobaError::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 covers usage, configuration and input-format problems; 3 covers
    /// failures that happen while the work itself is running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CobaError::Diverged { .. } | CobaError::Io { .. } => 3,
            _ => 2,
        }
    }
}
