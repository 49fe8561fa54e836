use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite input value {0}")]
    NonFiniteInput(f64),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("sketch is empty")]
    EmptySketch,
    #[error("quantile level {0} outside (0, 1]")]
    OutOfRangeQuantile(f64),
    #[error("malformed bytes: {0}")]
    MalformedBytes(String),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("invalid order p = {0}; p must be >= 1")]
    InvalidP(f64),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("estimator side {0} is empty")]
    EmptySide(&'static str),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("insufficient calibration data: need {needed} points, have {available}")]
    InsufficientCalibrationData { needed: usize, available: usize },
    #[error("detector used before calibration")]
    NotCalibrated,
    #[error("input format: {0}")]
    InputFormat(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
