use stream_ot_core::Error;

/// Process exit codes.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;
pub const EXIT_INTERNAL: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("usage: {0}")]
    Usage(String),
    #[error("input: {0}")]
    Input(String),
    #[error("resource ceiling: {0}")]
    Resource(String),
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Resource(_) => EXIT_RESOURCE,
            CliError::Output(_) => EXIT_INTERNAL,
            CliError::Core(e) => match e {
                Error::InvalidConfig(_)
                | Error::InvalidP(_)
                | Error::OutOfRangeQuantile(_)
                | Error::ConfigMismatch(_) => EXIT_USAGE,
                Error::NonFiniteInput(_)
                | Error::MalformedBytes(_)
                | Error::VersionMismatch { .. }
                | Error::DimensionMismatch { .. }
                | Error::EmptySide(_)
                | Error::EmptyInput(_)
                | Error::InsufficientCalibrationData { .. }
                | Error::InputFormat(_)
                | Error::Io(_) => EXIT_INPUT,
                Error::EmptySketch
                | Error::InvalidMeasure(_)
                | Error::InvalidCovariance(_)
                | Error::NotCalibrated => EXIT_INTERNAL,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn output_err(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}
