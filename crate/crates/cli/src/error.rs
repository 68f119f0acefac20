use std::path::Path;

use matrixinfo::Error;
use thiserror::Error;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VERIFY_FAILED: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const SHAPE: i32 = 3;
    pub const USAGE: i32 = 4;
    pub const DIVERGED: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Io(_) => exit::PARSE,
            CliError::Shape(_) => exit::SHAPE,
            CliError::Usage(_) => exit::USAGE,
            CliError::Core(e) => match e {
                Error::InvalidConfig(_) | Error::InvalidOrder(_) => exit::USAGE,
                Error::Diverged { .. } => exit::DIVERGED,
                _ => exit::SHAPE,
            },
        }
    }

    pub(crate) fn with_context(self, path: &Path) -> Self {
        match self {
            CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
            other => other,
        }
    }
}
