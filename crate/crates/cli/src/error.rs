use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ltlcbf_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("verification failed: {0}")]
    Verification(String),

    /// Several runs failed; `code` is the most severe of their exit statuses.
    #[error("{message}")]
    Batch { code: i32, message: String },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 spec or scenario error, 2 infeasible or timed
    /// out, 3 verification failure, 4 I/O error.
    pub fn exit_code(&self) -> i32 {
        use ltlcbf_core::Error as E;
        match self {
            CliError::Core(E::Infeasible { .. } | E::Timeout { .. } | E::Numerical { .. }) => 2,
            CliError::Core(E::Shape(_)) | CliError::Verification(_) => 3,
            CliError::Core(_) | CliError::Scenario(_) => 1,
            CliError::Io { .. } => 4,
            CliError::Batch { code, .. } => *code,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
