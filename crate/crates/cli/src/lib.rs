//! Command-line front end: configured runs, preset experiments, noise
//! calibration and SVG plots.

pub mod artifacts;
pub mod calibrate;
pub mod plot;
pub mod presets;
pub mod svg;

use std::path::Path;

use bellstab_core::calibration::CalibrationError;
use bellstab_core::{ConfigError, NoiseError, SimulationError};

/// Variable holding the default worker-thread count.
pub const WORKERS_ENV: &str = "BELLSTAB_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Plot(#[from] svg::PlotError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    pub fn csv(path: &Path, e: csv::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    /// 1 usage, 2 invalid configuration, 3 runtime fault.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}
