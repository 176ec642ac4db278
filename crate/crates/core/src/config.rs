//! TOML run configuration with explicit units in every key name.
//!
//! ```toml
//! [simulation]
//! t_final_us = 50.0
//! n_traj = 200
//!
//! [noise]
//! environment = "fluctuators"
//!
//! [controller]
//! strategy = "constant_dd"
//! delta_dd_mhz = 25.0
//! ```
//!
//! `noise.environment` and `controller.strategy` are required; everything
//! else defaults to the standard operating point (`Γ = 1/μs`, `η = 0.5`,
//! `Γ₂ = 1/50 μs⁻¹`, `τ_d = 0.5 μs`, `dt = 1 ns`, `δt = 10 ns`). Frequencies
//! given in MHz are converted to angular rates with `2π`; the manifest
//! written for a run stores angular rates directly, so reading it back
//! reproduces the configuration bit for bit.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{Estimation, RecordMode, Strategy};
use crate::engine::{InitialState, NoiseEnvironment, SimulationConfig};
use crate::error::ConfigError;
use crate::measurement::MeasurementConfig;
use crate::noise::FluctuatorBand;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub measurement: MeasurementSection,
    pub noise: NoiseSection,
    pub controller: ControllerSection,
    /// Informational block written into manifests; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunInfo>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_step_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_traj: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialState>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_per_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub environment: NoiseEnvironment,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma2_per_us: Option<f64>,
    /// Overrides the calibrated frequency-noise amplitude `ω`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude_rad_per_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fluctuator_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fluctuator_f_min_mhz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fluctuator_f_max_mhz: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKey {
    NoDecoupling,
    ConstantDd,
    OptimalDd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationKey {
    Delayed,
    Attenuated,
    Forward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub strategy: StrategyKey,
    /// Constant decoupling amplitude `Δ/2π`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_dd_mhz: Option<f64>,
    /// Constant decoupling amplitude `Δ`; exclusive with `delta_dd_mhz`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_dd_rad_per_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimation: Option<EstimationKey>,
    /// `Δt` of the attenuated drive `Ω_opt·δt/Δt`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attenuation_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_mode: Option<RecordMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loop_delay_us: Option<f64>,
    /// Overrides the filter's per-qubit dephasing rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_dephasing_per_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub include_forward_dephasing: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_substeps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    #[serde(default)]
    pub version: String,
    #[serde(default)]
    pub seed_rule: String,
    #[serde(default)]
    pub notes: Vec<String>,
}

pub const SEED_RULE: &str = "ChaCha8 keyed by the master seed; stream (trajectory << 3) | substream, \
substreams 0 record, 1 qubit-1 noise, 2 qubit-2 noise, 3 jumps";

fn check_positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn check_nonnegative(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::invalid(field, format!("must be nonnegative and finite, got {v}")))
    }
}

fn is_multiple(long: f64, short: f64) -> bool {
    let n = long / short;
    n >= 1.0 - 1e-9 && (n - n.round()).abs() <= 1e-9 * n.max(1.0)
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string_pretty(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Applies defaults, converts units and checks every invariant.
    pub fn resolve(&self) -> Result<SimulationConfig, ConfigError> {
        let d = SimulationConfig::default();
        let s = &self.simulation;
        let dt = check_positive("simulation.dt_us", s.dt_us.unwrap_or(d.dt))?;
        let control_step = check_positive("simulation.control_step_us", s.control_step_us.unwrap_or(d.control_step))?;
        if !is_multiple(control_step, dt) {
            return Err(ConfigError::invalid(
                "simulation.control_step_us",
                format!("{control_step} us is not an integer multiple of simulation.dt_us = {dt} us"),
            ));
        }
        let t_final = check_positive("simulation.t_final_us", s.t_final_us.unwrap_or(d.t_final))?;
        if !is_multiple(t_final, control_step) {
            return Err(ConfigError::invalid(
                "simulation.t_final_us",
                format!("{t_final} us is not an integer multiple of simulation.control_step_us = {control_step} us"),
            ));
        }
        let n_traj = s.n_traj.unwrap_or(d.n_traj);
        if n_traj == 0 {
            return Err(ConfigError::invalid("simulation.n_traj", "must be at least 1"));
        }
        let seed = s.seed.unwrap_or(d.seed);
        if seed > i64::MAX as u64 {
            return Err(ConfigError::invalid("simulation.seed", "must fit in a signed 64-bit integer"));
        }
        let checkpoint_every = s.checkpoint_every.unwrap_or(d.checkpoint_every);
        if checkpoint_every == 0 {
            return Err(ConfigError::invalid("simulation.checkpoint_every", "must be at least 1"));
        }

        let gamma = check_positive("measurement.gamma_per_us", self.measurement.gamma_per_us.unwrap_or(d.measurement.gamma()))?;
        let eta = self.measurement.eta.unwrap_or(d.measurement.eta());
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(ConfigError::invalid("measurement.eta", format!("must lie in (0, 1], got {eta}")));
        }
        let measurement =
            MeasurementConfig::new(gamma, eta).map_err(|e| ConfigError::invalid("measurement", e.to_string()))?;

        let n = &self.noise;
        let gamma2 = check_nonnegative("noise.gamma2_per_us", n.gamma2_per_us.unwrap_or(d.gamma2))?;
        let noise_amplitude = n
            .amplitude_rad_per_us
            .map(|w| check_nonnegative("noise.amplitude_rad_per_us", w))
            .transpose()?;
        let band = FluctuatorBand {
            count: n.fluctuator_count.unwrap_or(d.band.count),
            f_min_mhz: n.fluctuator_f_min_mhz.unwrap_or(d.band.f_min_mhz),
            f_max_mhz: n.fluctuator_f_max_mhz.unwrap_or(d.band.f_max_mhz),
        };
        band.validate().map_err(|e| ConfigError::invalid("noise.fluctuator_*", e.to_string()))?;

        let c = &self.controller;
        let delta = match (c.delta_dd_mhz, c.delta_dd_rad_per_us) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::invalid(
                    "controller.delta_dd_mhz",
                    "give either delta_dd_mhz or delta_dd_rad_per_us, not both",
                ))
            }
            (Some(f), None) => Some(("controller.delta_dd_mhz", TAU * f)),
            (None, Some(w)) => Some(("controller.delta_dd_rad_per_us", w)),
            (None, None) => None,
        };
        let strategy = match (c.strategy, delta) {
            (StrategyKey::ConstantDd, None) => d.strategy,
            (StrategyKey::ConstantDd, Some((field, w))) => {
                if !w.is_finite() {
                    return Err(ConfigError::invalid(field, "must be finite"));
                }
                Strategy::ConstantDD(w)
            }
            (_, Some((field, _))) => {
                return Err(ConfigError::invalid(field, "only meaningful with strategy = \"constant_dd\""))
            }
            (StrategyKey::NoDecoupling, None) => Strategy::NoDecoupling,
            (StrategyKey::OptimalDd, None) => Strategy::OptimalDD,
        };
        let estimation = match (c.estimation.unwrap_or(EstimationKey::Forward), c.attenuation_us) {
            (EstimationKey::Attenuated, Some(h)) => {
                let h = check_positive("controller.attenuation_us", h)?;
                if h < control_step {
                    return Err(ConfigError::invalid(
                        "controller.attenuation_us",
                        format!("{h} us is shorter than simulation.control_step_us = {control_step} us"),
                    ));
                }
                Estimation::Attenuated(h)
            }
            (EstimationKey::Attenuated, None) => {
                return Err(ConfigError::invalid("controller.attenuation_us", "required with estimation = \"attenuated\""))
            }
            (_, Some(_)) => {
                return Err(ConfigError::invalid("controller.attenuation_us", "only meaningful with estimation = \"attenuated\""))
            }
            (EstimationKey::Delayed, None) => Estimation::Delayed,
            (EstimationKey::Forward, None) => Estimation::ForwardEstimation,
        };
        let loop_delay = check_nonnegative("controller.loop_delay_us", c.loop_delay_us.unwrap_or(d.loop_delay))?;
        if loop_delay > 0.0 && loop_delay < control_step {
            return Err(ConfigError::invalid(
                "controller.loop_delay_us",
                format!("{loop_delay} us is shorter than simulation.control_step_us = {control_step} us"),
            ));
        }
        let filter_dephasing = c
            .filter_dephasing_per_us
            .map(|g| check_nonnegative("controller.filter_dephasing_per_us", g))
            .transpose()?;
        let filter_substeps = c.filter_substeps.unwrap_or(d.filter_substeps);
        if filter_substeps == 0 {
            return Err(ConfigError::invalid("controller.filter_substeps", "must be at least 1"));
        }

        let cfg = SimulationConfig {
            dt,
            control_step,
            loop_delay,
            t_final,
            measurement,
            environment: n.environment,
            gamma2,
            noise_amplitude,
            band,
            strategy,
            estimation,
            record_mode: c.record_mode.unwrap_or(d.record_mode),
            filter_dephasing,
            include_forward_dephasing: c.include_forward_dephasing.unwrap_or(d.include_forward_dephasing),
            filter_substeps,
            initial: s.initial.unwrap_or(d.initial),
            seed,
            n_traj,
            checkpoint_every,
        };
        cfg.validate().map_err(|e| ConfigError::invalid("simulation", e.to_string()))?;
        Ok(cfg)
    }

    /// The fully explicit form of `cfg`, as written to run manifests.
    pub fn from_simulation(cfg: &SimulationConfig) -> Self {
        let (strategy, delta) = match cfg.strategy {
            Strategy::NoDecoupling => (StrategyKey::NoDecoupling, None),
            Strategy::ConstantDD(w) => (StrategyKey::ConstantDd, Some(w)),
            Strategy::OptimalDD => (StrategyKey::OptimalDd, None),
        };
        let (estimation, attenuation) = match cfg.estimation {
            Estimation::Delayed => (EstimationKey::Delayed, None),
            Estimation::Attenuated(h) => (EstimationKey::Attenuated, Some(h)),
            Estimation::ForwardEstimation => (EstimationKey::Forward, None),
        };
        Self {
            simulation: SimulationSection {
                dt_us: Some(cfg.dt),
                control_step_us: Some(cfg.control_step),
                t_final_us: Some(cfg.t_final),
                n_traj: Some(cfg.n_traj),
                seed: Some(cfg.seed),
                checkpoint_every: Some(cfg.checkpoint_every),
                initial: Some(cfg.initial),
            },
            measurement: MeasurementSection {
                gamma_per_us: Some(cfg.measurement.gamma()),
                eta: Some(cfg.measurement.eta()),
            },
            noise: NoiseSection {
                environment: cfg.environment,
                gamma2_per_us: Some(cfg.gamma2),
                amplitude_rad_per_us: cfg.noise_amplitude,
                fluctuator_count: Some(cfg.band.count),
                fluctuator_f_min_mhz: Some(cfg.band.f_min_mhz),
                fluctuator_f_max_mhz: Some(cfg.band.f_max_mhz),
            },
            controller: ControllerSection {
                strategy,
                delta_dd_mhz: None,
                delta_dd_rad_per_us: delta,
                estimation: Some(estimation),
                attenuation_us: attenuation,
                record_mode: Some(cfg.record_mode),
                loop_delay_us: Some(cfg.loop_delay),
                filter_dephasing_per_us: cfg.filter_dephasing,
                include_forward_dephasing: Some(cfg.include_forward_dephasing),
                filter_substeps: Some(cfg.filter_substeps),
            },
            run: None,
        }
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<SimulationConfig, ConfigError> {
    FileConfig::from_toml(text)?.resolve()
}

pub fn load_config(path: &Path) -> Result<SimulationConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config(&text).map_err(|e| match e {
        ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Manifest text for a run: the explicit configuration plus the seed rule
/// and any notes about how defaults were resolved.
pub fn manifest(cfg: &SimulationConfig) -> Result<String, ConfigError> {
    let mut file = FileConfig::from_simulation(cfg);
    file.run = Some(RunInfo {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed_rule: SEED_RULE.to_string(),
        notes: cfg.notes(),
    });
    file.to_toml()
}
