//! Monte Carlo simulation of a continuously monitored two-qubit register held
//! in the Bell state `|ψ+⟩` by measurement-based feedback.

pub mod calibration;
pub mod config;
pub mod controller;
pub mod engine;
pub mod error;
pub mod measurement;
pub mod noise;
pub mod parallel;
pub mod quantum;
pub mod seeding;

pub use error::{ConfigError, ControlError, FitError, MeasurementError, NoiseError, SimulationError, StateError};
pub use quantum::{
    bell_decompose, control_unitary, fidelity_to_target, purity, total_unitary, BellDecomposition, BellState,
    OperatorLibrary, TwoQubitState, OPS,
};

#[cfg(test)]
pub(crate) mod testutil;
