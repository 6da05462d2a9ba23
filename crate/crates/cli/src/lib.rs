//! Experiment orchestration for certified ensemble federated learning:
//! config parsing, a resumable staged pipeline and CSV reporting.

pub mod commands;
pub mod config;
pub mod pipeline;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fedcert::Error),

    #[error("config error: {0}")]
    Config(String),

    /// A certified prediction changed within its certified level.
    #[error("CERTIFICATE VIOLATION: {0}")]
    Violation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status: 3 for violations, 4 for numeric failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Violation(_) => 3,
            CliError::Core(e) if matches!(e.root(), fedcert::Error::Numeric(_)) => 4,
            _ => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Violation("x".into()).exit_code(), 3);
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        let numeric = fedcert::Error::Row {
            row: 3,
            source: Box::new(fedcert::Error::Numeric("nan".into())),
        };
        assert_eq!(CliError::from(numeric).exit_code(), 4);
        assert_eq!(CliError::from(fedcert::Error::Format("x".into())).exit_code(), 2);
    }
}
