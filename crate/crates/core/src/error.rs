use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("density matrix has non-finite entries")]
    NonFinite,
    #[error("density matrix is not Hermitian (max |ρ − ρ†| = {0:e})")]
    NotHermitian(f64),
    #[error("density matrix trace is {0}, expected 1")]
    Trace(f64),
    #[error("density matrix has eigenvalue {0:e} below the positivity slack")]
    NotPositive(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("a fluctuator bank needs at least 2 fluctuators, got {0}")]
    TooFewFluctuators(usize),
    #[error("fluctuator band must satisfy 0 < f_min < f_max, got ({f_min}, {f_max}) MHz")]
    InvalidBand { f_min: f64, f_max: f64 },
    #[error("duration must be positive, got {0}")]
    InvalidDuration(f64),
    #[error("time {t} μs outside the realized window [0, {t_final}] μs")]
    TimeOutOfRange { t: f64, t_final: f64 },
    #[error("no-jump operator is not positive for dt = {dt} (min eigenvalue {min_eigenvalue:e})")]
    NoJumpNotPositive { dt: f64, min_eigenvalue: f64 },
    #[error("PSD estimate needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("{0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasurementError {
    #[error("measurement normalization Tr(M†Mρ) = {0:e} is degenerate")]
    DegenerateNormalization(f64),
    #[error("invalid measurement parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("drive buffer holds {len} commands but the loop delay needs {expected}")]
    BufferLength { len: usize, expected: usize },
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("curve never decays below {threshold} inside the fit window")]
    NotDecaying { threshold: f64 },
    #[error("too few usable points for a fit ({0})")]
    TooFewPoints(usize),
    #[error("fit did not converge: {0}")]
    NoConvergence(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("could not read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("trajectory {index} (seed {seed:#018x}) failed at step {step}: {source}")]
    Trajectory { index: usize, seed: u64, step: usize, source: Box<SimulationError> },
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
}
