use std::process::ExitCode;

use ttaline::data::DataError;
use ttaline::lm::LmError;
use ttaline::optical::OpticalError;
use ttaline::textcore::TextError;
use ttaline::tta::TtaError;

/// Command failure, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, missing inputs or an invalid config (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Inputs exist but are malformed or inconsistent (exit 3).
    #[error("{0}")]
    Data(String),
    /// Anything that fails while computing (exit 4).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        })
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TextError> for CliError {
    fn from(e: TextError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<OpticalError> for CliError {
    fn from(e: OpticalError) -> Self {
        match e {
            OpticalError::Io(e) => CliError::Data(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TtaError> for CliError {
    fn from(e: TtaError) -> Self {
        match e {
            TtaError::BadConfig(m) => CliError::Usage(m),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
