use serde::Serialize;
use thiserror::Error;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Core(#[from] sdr_core::Error),
}

impl CliError {
    pub fn is_validation(&self) -> bool {
        use sdr_core::Error as E;
        match self {
            CliError::Validation(_) => true,
            CliError::Runtime(_) => false,
            CliError::Core(e) => !matches!(
                e,
                E::Io { .. } | E::Shape(_) | E::NonFinite(_) | E::ZeroNorm(_)
            ),
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            EXIT_VALIDATION
        } else {
            EXIT_RUNTIME
        }
    }
}

/// Machine-readable failure report printed to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport<'a> {
    pub command: &'a str,
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
    pub removed_outputs: Vec<String>,
}
