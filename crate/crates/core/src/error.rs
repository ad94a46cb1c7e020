use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("spectrum: {0}")]
    Spectrum(String),

    #[error("time {t} outside [0, {final_time}]")]
    TimeOutOfRange { t: f64, final_time: f64 },

    #[error("time {t} is not a multiple of the step {dt}")]
    TimeOffGrid { t: f64, dt: f64 },

    #[error("sensor: {0}")]
    Sensor(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("problem size {size} exceeds the dense cap {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
