use std::path::PathBuf;

use thiserror::Error;

use crate::bsde::TrainingHistory;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tenor structure needs at least two dates")]
    EmptyTenor,
    #[error("tenor dates must start at 0 and be strictly increasing (offending index {index})")]
    NonMonotoneDates { index: usize },
    #[error("curve is defined up to t = {available}, but t = {required} was requested")]
    CurveDomainTooShort { available: f64, required: f64 },
    #[error("swap annuity is zero over periods [{start}, {end})")]
    DegenerateAnnuity { start: usize, end: usize },

    #[error("local volatility {0} is undefined for negative rate {1}")]
    NegativeRateForCev(&'static str, f64),
    #[error("invalid volatility specification: {0}")]
    InvalidVolSpec(String),
    #[error("correlation decay must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("correlation matrix is not positive definite")]
    CorrelationNotPositiveDefinite,
    #[error("rate L_{rate} is already reset at t = {time}")]
    DeadRate { rate: usize, time: f64 },
    #[error("t = {0} is not a point of the time grid")]
    OffGridTime(f64),
    #[error("time grid does not match tenor structure: {0}")]
    GridTenorMismatch(String),

    #[error("invalid instrument: {0}")]
    InvalidInstrument(String),
    #[error("tenor date index {0} is not an exercise date of the instrument")]
    NotAnExerciseDate(usize),
    #[error("exercise date t = {0} is not on the simulation grid")]
    ExerciseOffGrid(f64),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error("parameter set mode does not match the solver ({0})")]
    ModeMismatch(&'static str),
    #[error("training diverged: non-finite loss at iteration {iteration}")]
    NonFiniteLoss {
        iteration: usize,
        history: Box<TrainingHistory>,
    },
    #[error("regression design matrix is singular")]
    SingularRegression,

    #[error("config error: {0}")]
    ConfigParse(String),
    #[error("fixture not found: {}", .0.display())]
    FixtureMissing(PathBuf),
    #[error("missing run artifacts: {0}")]
    MissingArtifacts(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
