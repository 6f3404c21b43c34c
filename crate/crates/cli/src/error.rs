//! Process-level error handling: every failure maps to a documented exit
//! code.

use std::fmt;

/// Exit codes: 0 success, 1 check failure, 2 configuration error,
/// 3 I/O error, 4 training divergence, 5 missing dependency artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    CheckFailure = 1,
    Config = 2,
    Io = 3,
    Divergence = 4,
    MissingArtifact = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> CliError {
        CliError {
            code: ExitCode::Config,
            message: msg.into(),
        }
    }

    pub fn io(msg: impl Into<String>) -> CliError {
        CliError {
            code: ExitCode::Io,
            message: msg.into(),
        }
    }

    pub fn check(msg: impl Into<String>) -> CliError {
        CliError {
            code: ExitCode::CheckFailure,
            message: msg.into(),
        }
    }

    pub fn missing(msg: impl Into<String>) -> CliError {
        CliError {
            code: ExitCode::MissingArtifact,
            message: msg.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<dtl_core::train::TrainError> for CliError {
    fn from(e: dtl_core::train::TrainError) -> Self {
        use dtl_core::train::TrainError;
        match e {
            TrainError::Divergence(_) | TrainError::NonFiniteGradient { .. } => CliError {
                code: ExitCode::Divergence,
                message: e.to_string(),
            },
            TrainError::MissingTeacher(_) => CliError::missing(e.to_string()),
            other => CliError::config(other.to_string()),
        }
    }
}

impl From<dtl_core::train::CheckpointError> for CliError {
    fn from(e: dtl_core::train::CheckpointError) -> Self {
        use dtl_core::train::CheckpointError;
        match e {
            CheckpointError::Io(io) => CliError::io(io.to_string()),
            other => CliError::config(other.to_string()),
        }
    }
}

impl From<dtl_core::event::EventIoError> for CliError {
    fn from(e: dtl_core::event::EventIoError) -> Self {
        use dtl_core::event::EventIoError;
        match e {
            EventIoError::Io(io) => CliError::io(io.to_string()),
            other => CliError::config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
