//! The feedback controller: Bayesian filtering on the control clock, drive
//! laws, and forward estimation through the loop delay.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{ControlError, MeasurementError};
use crate::measurement::{bayesian_update_in_place, MeasurementConfig};
use crate::noise::{ChannelBuilder, LindbladChannel};
use crate::quantum::{bell_decompose, conjugate_in_place, control_unitary, fidelity_to_target, BellDecomposition, Mat4, TwoQubitState};

/// Numerator and denominator below this are treated as "no information".
pub const DEGENERATE_TOL: f64 = 1e-14;

/// How the counter-rotating drive `Δ` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    /// `Δ = 0`.
    NoDecoupling,
    /// Always-on `Δ = Δ_dd` (rad/μs).
    ConstantDD(f64),
    /// `Δ = Δ_opt(ρ_est)` every cycle.
    OptimalDD,
}

/// Which state the drive laws read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Estimation {
    /// The filtered estimate, ignoring drives still in flight.
    Delayed,
    /// The filtered estimate with `Ω` scaled by `δt/Δt` (horizon `Δt` in μs).
    Attenuated(f64),
    /// The filtered estimate propagated through the in-flight drives.
    ForwardEstimation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordMode {
    /// `Ω = Ω_opt` on the updated estimate.
    Deterministic,
    /// `Ω = ηΓ·P(ρ)·r̃` on the estimate before this cycle's update.
    RecordProportional,
    /// No co-rotating feedback, `Ω = 0`.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub strategy: Strategy,
    pub estimation: Estimation,
    pub record_mode: RecordMode,
    /// Simulation step, μs.
    pub dt: f64,
    /// Control cycle `δt`, μs.
    pub control_step: f64,
    /// Loop delay `τ_d`, μs.
    pub loop_delay: f64,
    pub measurement: MeasurementConfig,
    /// Per-qubit dephasing rate the filter assumes, 1/μs.
    pub filter_dephasing_rate: f64,
    /// `T₁` assumed by the filter, μs (`f64::INFINITY` for none).
    pub t1: f64,
    /// Interleave the filter's Lindblad channel when propagating through the
    /// loop delay instead of applying the drives alone.
    pub include_forward_dephasing: bool,
    /// Pieces the filter splits each cycle into, reusing the averaged record
    /// for every piece. 1 is the plain cycle map; more pieces track fast
    /// drives such as `Δ δt ~ π/2` that do not commute with `N̂`.
    pub filter_substeps: usize,
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: String| Err(ControlError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.control_step >= self.dt) {
            return bad(format!("control step {} is shorter than dt {}", self.control_step, self.dt));
        }
        let n = self.control_step / self.dt;
        if (n - n.round()).abs() > 1e-9 * n {
            return bad(format!("control step {} is not a multiple of dt {}", self.control_step, self.dt));
        }
        if !(self.loop_delay >= 0.0 && self.loop_delay.is_finite()) {
            return bad(format!("loop delay must be nonnegative, got {}", self.loop_delay));
        }
        if !(self.filter_dephasing_rate >= 0.0 && self.filter_dephasing_rate.is_finite()) {
            return bad(format!("filter dephasing rate must be nonnegative, got {}", self.filter_dephasing_rate));
        }
        if !(self.t1 > 0.0) {
            return bad(format!("T1 must be positive, got {}", self.t1));
        }
        if let Estimation::Attenuated(h) = self.estimation {
            if !(h >= self.control_step && h.is_finite()) {
                return bad(format!("attenuation horizon {h} is shorter than the control step {}", self.control_step));
            }
        }
        if self.filter_substeps == 0 {
            return bad("filter substeps must be at least 1".into());
        }
        if let Strategy::ConstantDD(d) = self.strategy {
            if !d.is_finite() {
                return bad("decoupling drive must be finite".into());
            }
        }
        Ok(())
    }

    /// `n = δt/dt`.
    pub fn substeps(&self) -> usize {
        (self.control_step / self.dt).round() as usize
    }

    /// Length of one filter piece, `δt / filter_substeps`.
    pub fn filter_step(&self) -> f64 {
        self.control_step / self.filter_substeps as f64
    }

    /// `⌊τ_d/δt⌋`, the number of commands in flight.
    pub fn delay_cycles(&self) -> usize {
        (self.loop_delay / self.control_step + 1e-9).floor() as usize
    }

    /// The command assumed to be acting before the first feedback arrives:
    /// no feedback rotation and the decoupling drive if it is always on.
    pub fn idle_command(&self) -> DriveCommand {
        let delta = match self.strategy {
            Strategy::ConstantDD(d) => d,
            _ => 0.0,
        };
        DriveCommand { omega: 0.0, delta, issued_at: 0.0 }
    }

    /// The Lindblad channel over one control cycle, used when forward
    /// estimation interleaves dephasing.
    pub fn cycle_channel(&self) -> Result<LindbladChannel, ControlError> {
        self.channel_over(self.control_step)
    }

    /// The Lindblad channel over one filter piece.
    pub fn filter_channel(&self) -> Result<LindbladChannel, ControlError> {
        self.channel_over(self.filter_step())
    }

    fn channel_over(&self, step: f64) -> Result<LindbladChannel, ControlError> {
        ChannelBuilder::new()
            .qubit_dephasing(self.filter_dephasing_rate)
            .relaxation(self.t1)
            .measurement_dephasing(self.measurement.eta(), self.measurement.gamma())
            .build(step)
            .map_err(|e| ControlError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveCommand {
    /// rad/μs
    pub omega: f64,
    /// rad/μs
    pub delta: f64,
    /// μs
    pub issued_at: f64,
}

/// Commands emitted but not yet acting on the system, oldest first, with
/// running sums of `Ω` and `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveBuffer {
    capacity: usize,
    queue: VecDeque<DriveCommand>,
    omega: CompensatedSum,
    delta: CompensatedSum,
    updates: u64,
}

/// Neumaier summation; the running value is re-derived from the buffer
/// contents every `REFRESH_INTERVAL` updates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

const REFRESH_INTERVAL: u64 = 1 << 12;

impl DriveBuffer {
    /// A buffer of `capacity` copies of `fill`.
    pub fn new(capacity: usize, fill: DriveCommand) -> Self {
        let mut b = Self {
            capacity,
            queue: VecDeque::with_capacity(capacity + 1),
            omega: CompensatedSum::default(),
            delta: CompensatedSum::default(),
            updates: 0,
        };
        for _ in 0..capacity {
            b.queue.push_back(fill);
        }
        b.refresh();
        b
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DriveCommand> {
        self.queue.iter()
    }

    /// Appends `cmd`; once the buffer is over capacity the oldest command
    /// leaves and is returned (with zero capacity, `cmd` itself).
    pub fn push(&mut self, cmd: DriveCommand) -> Option<DriveCommand> {
        self.queue.push_back(cmd);
        self.omega.add(cmd.omega);
        self.delta.add(cmd.delta);
        let out = if self.queue.len() > self.capacity {
            let old = self.queue.pop_front()?;
            self.omega.add(-old.omega);
            self.delta.add(-old.delta);
            Some(old)
        } else {
            None
        };
        self.updates += 1;
        if self.updates % REFRESH_INTERVAL == 0 {
            self.refresh();
        }
        out
    }

    fn refresh(&mut self) {
        let (mut o, mut d) = (CompensatedSum::default(), CompensatedSum::default());
        for c in &self.queue {
            o.add(c.omega);
            d.add(c.delta);
        }
        self.omega = o;
        self.delta = d;
    }

    /// Running `(Σ Ω, Σ Δ)` over the buffer.
    pub fn sums(&self) -> (f64, f64) {
        (self.omega.value(), self.delta.value())
    }

    /// Sums recomputed from scratch.
    pub fn recomputed_sums(&self) -> (f64, f64) {
        self.queue.iter().fold((0.0, 0.0), |(o, d), c| (o + c.omega, d + c.delta))
    }
}

/// `Ω_opt` maximizing `⟨ψ+|UρU†|ψ+⟩` over a single cycle:
/// `2Ω_opt δt = atan2(2Re ρ_{ψ+,φ−}, ρ_{ψ+} − ρ_{φ−})`.
pub fn omega_opt(d: &BellDecomposition, control_step: f64) -> f64 {
    let num = 2.0 * d.psi_plus_phi_minus.re;
    let den = d.psi_plus - d.phi_minus;
    if num.abs() < DEGENERATE_TOL && den.abs() < DEGENERATE_TOL {
        return 0.0;
    }
    num.atan2(den) / (2.0 * control_step)
}

/// `Δ_opt` minimizing `⟨ψ−|UρU†|ψ−⟩` over a single cycle:
/// `2Δ_opt δt = atan2(2Re ρ_{φ+,ψ−}, ρ_{φ+} − ρ_{ψ−})`.
pub fn delta_opt(d: &BellDecomposition, control_step: f64) -> f64 {
    let num = 2.0 * d.phi_plus_psi_minus.re;
    let den = d.phi_plus - d.psi_minus;
    if num.abs() < DEGENERATE_TOL && den.abs() < DEGENERATE_TOL {
        return 0.0;
    }
    num.atan2(den) / (2.0 * control_step)
}

/// `C₊ = 2Re ρ_{ψ+,φ−}/(ρ_{ψ+} − ρ_{φ−})`, the record-independent part of
/// the measurement-aware optimum.
pub fn bias_coefficient(d: &BellDecomposition) -> Option<f64> {
    let den = d.psi_plus - d.phi_minus;
    (den.abs() > DEGENERATE_TOL).then(|| 2.0 * d.psi_plus_phi_minus.re / den)
}

/// Record gain `P ≈ Re ρ_{ψ+,φ+}/(ρ_{ψ+} − ρ_{φ−})` used by the
/// record-proportional law. `None` when the denominator vanishes.
pub fn record_gain(d: &BellDecomposition) -> Option<f64> {
    let den = d.psi_plus - d.phi_minus;
    (den.abs() > DEGENERATE_TOL).then(|| d.psi_plus_phi_plus.re / den)
}

/// Record gain including the cross term,
/// `P = Re ρ_{ψ+,φ+}/D + C₊·Re ρ_{φ+,φ−}/D`, `D = ρ_{ψ+} − ρ_{φ−}`.
pub fn record_gain_full(d: &BellDecomposition) -> Option<f64> {
    let den = d.psi_plus - d.phi_minus;
    let c = bias_coefficient(d)?;
    Some((d.psi_plus_phi_plus.re + c * d.phi_plus_phi_minus.re) / den)
}

/// The `O(dt)` deterministic correction `Q` of the measurement-aware
/// optimum. Only used to check the series expansion.
pub fn drift_coefficient(d: &BellDecomposition) -> Option<f64> {
    let den = d.psi_plus - d.phi_minus;
    let c = bias_coefficient(d)?;
    let (a, b, f) = (d.psi_plus_phi_minus.re, d.psi_plus_phi_plus.re, d.phi_plus_phi_minus.re);
    Some(
        -c / 2.0
            + (4.0 * b * f + 2.0 * a * (d.phi_plus - d.phi_minus)) / (den * den)
            + 2.0 * a * (2.0 * f).powi(2) / (den * den * den),
    )
}

/// Result of the record-proportional law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProportionalDrive {
    pub omega: f64,
    /// The gain was undefined (`ρ_{ψ+} = ρ_{φ−}`) and the drive was zeroed.
    pub degenerate: bool,
}

/// `Ω = ηΓ·P(ρ)·r`, clamped to `|Ω|δt ≤ π/2`.
pub fn omega_record_proportional(
    d: &BellDecomposition,
    r: f64,
    cfg: &MeasurementConfig,
    control_step: f64,
) -> ProportionalDrive {
    match record_gain(d) {
        None => ProportionalDrive { omega: 0.0, degenerate: true },
        Some(p) => {
            let limit = FRAC_PI_2 / control_step;
            let omega = (cfg.eta() * cfg.gamma() * p * r).clamp(-limit, limit);
            ProportionalDrive { omega, degenerate: false }
        }
    }
}

/// Optimal `Ω` for a measurement with outcome `r` followed by a drive over
/// the same `dt`, written in terms of the pre-measurement state.
pub fn omega_measurement_aware(d: &BellDecomposition, r: f64, cfg: &MeasurementConfig, dt: f64) -> f64 {
    let k = cfg.strength(dt);
    let x = r * k;
    let (ch, sh) = (x.cosh(), x.sinh());
    let num = 2.0 * (-k / 2.0).exp() * (ch * d.psi_plus_phi_minus.re + sh * d.psi_plus_phi_plus.re);
    let den = d.psi_plus
        - (-k).exp() * (ch * ch * d.phi_minus + sh * sh * d.phi_plus + (2.0 * x).sinh() * d.phi_plus_phi_minus.re);
    if num.abs() < DEGENERATE_TOL && den.abs() < DEGENERATE_TOL {
        return 0.0;
    }
    num.atan2(den) / (2.0 * dt)
}

/// Small-`dt` expansion `2Ωdt = atan(C₊ + 2ηΓ·P·r·dt + ηΓ·Q·dt/2)`. The
/// principal branch agrees with [`omega_measurement_aware`] when
/// `ρ_{ψ+} > ρ_{φ−}`.
pub fn omega_measurement_aware_series(d: &BellDecomposition, r: f64, cfg: &MeasurementConfig, dt: f64) -> Option<f64> {
    let rate = cfg.eta() * cfg.gamma();
    let t = bias_coefficient(d)? + 2.0 * rate * record_gain_full(d)? * r * dt + rate * drift_coefficient(d)? * dt / 2.0;
    Some(t.atan() / (2.0 * dt))
}

/// One filter step over a control cycle: Bayesian update with the averaged
/// record, the filter's Lindblad channel, and the drive that acted during
/// the cycle, repeated over `filter_substeps` pieces. `channel` must be
/// [`ControllerConfig::filter_channel`].
pub fn filter_update(
    estimate: &TwoQubitState,
    r_avg: f64,
    acting: &DriveCommand,
    cfg: &ControllerConfig,
    channel: &LindbladChannel,
) -> Result<TwoQubitState, ControlError> {
    let mut rho = *estimate.matrix();
    filter_update_in_place(&mut rho, r_avg, acting, cfg, channel)?;
    Ok(TwoQubitState::from_matrix_unchecked(rho))
}

fn filter_update_in_place(
    rho: &mut Mat4,
    r_avg: f64,
    acting: &DriveCommand,
    cfg: &ControllerConfig,
    channel: &LindbladChannel,
) -> Result<(), ControlError> {
    let step = cfg.filter_step();
    let strength = cfg.measurement.strength(step);
    let u = control_unitary(acting.omega, acting.delta, step);
    for _ in 0..cfg.filter_substeps {
        bayesian_update_in_place(rho, r_avg, strength)?;
        channel.apply_in_place(rho);
        conjugate_in_place(rho, &u);
    }
    let tr = rho.trace().re;
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(MeasurementError::DegenerateNormalization(tr).into());
    }
    *rho /= crate::quantum::C64::from(tr);
    Ok(())
}

/// Propagates the estimate through the drives still in flight. Since
/// `Ŷ₊` and `Ŷ₋` commute, the product of the buffered unitaries collapses to
/// one rotation by the running sums; with `include_forward_dephasing` each
/// buffered drive is followed by `channel`, the filter's Lindblad channel over
/// one cycle ([`ControllerConfig::cycle_channel`]).
pub fn forward_estimate(
    estimate: &TwoQubitState,
    buffer: &DriveBuffer,
    cfg: &ControllerConfig,
    channel: &LindbladChannel,
) -> Result<TwoQubitState, ControlError> {
    let expected = cfg.delay_cycles();
    if buffer.len() != expected {
        return Err(ControlError::BufferLength { len: buffer.len(), expected });
    }
    if buffer.is_empty() {
        return Ok(*estimate);
    }
    let mut rho = *estimate.matrix();
    if cfg.include_forward_dephasing {
        for c in buffer.iter() {
            let u = control_unitary(c.omega, c.delta, cfg.control_step);
            conjugate_in_place(&mut rho, &u);
            channel.apply_in_place(&mut rho);
        }
    } else {
        let (so, sd) = buffer.sums();
        let u = control_unitary(so, sd, cfg.control_step);
        conjugate_in_place(&mut rho, &u);
    }
    Ok(TwoQubitState::from_matrix_unchecked(rho))
}

/// What one control cycle produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleOutput {
    /// The command just computed, entering the loop delay.
    pub issued: DriveCommand,
    /// The command that acts on the system during the next cycle.
    pub next_acting: DriveCommand,
    /// `⟨ψ+|ρ_est|ψ+⟩` after the filter step.
    pub fidelity_estimate: f64,
    /// The record-proportional gain was undefined this cycle.
    pub degenerate_gain: bool,
}

/// Per-trajectory controller state.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    estimate: Mat4,
    buffer: DriveBuffer,
    acting: DriveCommand,
    channel: LindbladChannel,
    cycle_channel: LindbladChannel,
    cycles: u64,
    degenerate_cycles: u64,
}

impl Controller {
    pub fn new(cfg: ControllerConfig, initial_estimate: TwoQubitState) -> Result<Self, ControlError> {
        cfg.validate()?;
        initial_estimate.validate()?;
        let idle = cfg.idle_command();
        Ok(Self {
            cfg,
            estimate: *initial_estimate.matrix(),
            buffer: DriveBuffer::new(cfg.delay_cycles(), idle),
            acting: idle,
            channel: cfg.filter_channel()?,
            cycle_channel: cfg.cycle_channel()?,
            cycles: 0,
            degenerate_cycles: 0,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn estimate(&self) -> TwoQubitState {
        TwoQubitState::from_matrix_unchecked(self.estimate)
    }

    /// Raw access for invariant checks and positivity repair.
    pub fn estimate_matrix_mut(&mut self) -> &mut Mat4 {
        &mut self.estimate
    }

    pub fn buffer(&self) -> &DriveBuffer {
        &self.buffer
    }

    /// The command acting on the system during the current cycle.
    pub fn acting(&self) -> DriveCommand {
        self.acting
    }

    pub fn degenerate_cycles(&self) -> u64 {
        self.degenerate_cycles
    }

    /// Runs one cycle ending at `t_now` with averaged record `r_avg`.
    pub fn control_cycle(&mut self, r_avg: f64, t_now: f64) -> Result<CycleOutput, ControlError> {
        let cfg = self.cfg;
        let before = self.estimate;
        filter_update_in_place(&mut self.estimate, r_avg, &self.acting, &cfg, &self.channel)?;
        let filtered = TwoQubitState::from_matrix_unchecked(self.estimate);

        let law_state = match cfg.estimation {
            Estimation::ForwardEstimation => forward_estimate(&filtered, &self.buffer, &cfg, &self.cycle_channel)?,
            Estimation::Delayed | Estimation::Attenuated(_) => filtered,
        };
        let d = bell_decompose(&law_state);

        let mut degenerate = false;
        let mut omega = match cfg.record_mode {
            RecordMode::Deterministic => omega_opt(&d, cfg.control_step),
            RecordMode::Off => 0.0,
            RecordMode::RecordProportional => {
                let pre = TwoQubitState::from_matrix_unchecked(before);
                let pre = match cfg.estimation {
                    Estimation::ForwardEstimation => forward_estimate(&pre, &self.buffer, &cfg, &self.cycle_channel)?,
                    _ => pre,
                };
                let drive = omega_record_proportional(&bell_decompose(&pre), r_avg, &cfg.measurement, cfg.control_step);
                degenerate = drive.degenerate;
                drive.omega
            }
        };
        if let Estimation::Attenuated(horizon) = cfg.estimation {
            omega *= cfg.control_step / horizon;
        }
        let delta = match cfg.strategy {
            Strategy::NoDecoupling => 0.0,
            Strategy::ConstantDD(v) => v,
            Strategy::OptimalDD => delta_opt(&d, cfg.control_step),
        };

        let issued = DriveCommand { omega, delta, issued_at: t_now };
        self.acting = self.buffer.push(issued).unwrap_or(issued);
        self.cycles += 1;
        if degenerate {
            self.degenerate_cycles += 1;
        }
        Ok(CycleOutput {
            issued,
            next_acting: self.acting,
            fidelity_estimate: fidelity_to_target(&filtered),
            degenerate_gain: degenerate,
        })
    }
}
