//! Error type shared by every subcommand, with a stable exit-code mapping.

use thiserror::Error;

/// Anything a subcommand can fail with.  The three buckets map onto the
/// process exit codes that scripts are allowed to rely on.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or inconsistent run configuration (unknown key, unparsable value,
    /// out-of-range setting, missing required flag).  Exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Unreadable, corrupt, or mismatched checkpoint.  Exit code 3.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    /// Everything else: I/O trouble, internal numerics failures.  Exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// Process exit code for this error (0 is reserved for success).
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Checkpoint(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<soda_core::error::CoreError> for CliError {
    fn from(e: soda_core::error::CoreError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<soda_numerics::NumericsError> for CliError {
    fn from(e: soda_numerics::NumericsError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
