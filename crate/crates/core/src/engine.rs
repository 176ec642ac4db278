//! Trajectory engine.
//!
//! The system evolves on the fine clock `dt` by measurement backaction, the
//! Lindblad channel and the full Hamiltonian. Every control cycle `δt` the
//! controller consumes the averaged record and issues a command, which
//! reaches the system after the loop delay.

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calibration::{omega_for_gamma2, nominal_effective_dephasing, NoiseKind};
use crate::controller::{record_gain, Controller, ControllerConfig, DriveCommand, Estimation, RecordMode, Strategy};
use crate::error::{SimulationError, StateError};
use crate::measurement::{bayesian_update_in_place, half_parity_expectation, MeasurementConfig};
use crate::noise::{build_fluctuator_set, ChannelBuilder, FluctuatorBand, FluctuatorCursor, FluctuatorSet, LindbladChannel};
use crate::parallel::{ordered_fold, with_workers};
use crate::quantum::{
    bell_decompose, conjugate_in_place, fidelity_to_target, total_unitary, BellState, Mat4, TwoQubitState, C64, HERMITIAN_TOL,
    POSITIVITY_TOL, TRACE_TOL,
};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseEnvironment {
    /// 1/f telegraph noise, `Γ_fl = Γ₂`, no relaxation.
    Fluctuators,
    /// Dephasing split evenly, `Γ_fl = 1/(2T₁) = Γ₂/2`.
    FluctuatorsPlusT1,
    /// Gaussian white frequency noise, `Γ_fl = Γ₂`.
    White,
}

impl NoiseEnvironment {
    pub fn kind(self) -> NoiseKind {
        match self {
            NoiseEnvironment::White => NoiseKind::White,
            _ => NoiseKind::Fluctuators,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    PlusPlus,
    PsiPlus,
    PsiMinus,
    PhiPlus,
    PhiMinus,
    MaximallyMixed,
}

impl InitialState {
    pub fn state(self) -> TwoQubitState {
        match self {
            InitialState::PlusPlus => TwoQubitState::plus_plus(),
            InitialState::PsiPlus => TwoQubitState::bell(BellState::PsiPlus),
            InitialState::PsiMinus => TwoQubitState::bell(BellState::PsiMinus),
            InitialState::PhiPlus => TwoQubitState::bell(BellState::PhiPlus),
            InitialState::PhiMinus => TwoQubitState::bell(BellState::PhiMinus),
            InitialState::MaximallyMixed => TwoQubitState::maximally_mixed(),
        }
    }
}

/// Everything one ensemble run needs, in internal units (μs, 1/μs, rad/μs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub dt: f64,
    pub control_step: f64,
    pub loop_delay: f64,
    pub t_final: f64,
    pub measurement: MeasurementConfig,
    pub environment: NoiseEnvironment,
    /// Total non-measurement dephasing rate `Γ₂`; 0 disables the environment.
    pub gamma2: f64,
    /// Overrides the calibrated noise amplitude `ω`.
    pub noise_amplitude: Option<f64>,
    pub band: FluctuatorBand,
    pub strategy: Strategy,
    pub estimation: Estimation,
    pub record_mode: RecordMode,
    /// Overrides the filter's per-qubit dephasing rate.
    pub filter_dephasing: Option<f64>,
    pub include_forward_dephasing: bool,
    /// Pieces the filter splits each control cycle into.
    pub filter_substeps: usize,
    pub initial: InitialState,
    pub seed: u64,
    pub n_traj: usize,
    /// Control cycles between stored checkpoints.
    pub checkpoint_every: usize,
}

impl Default for SimulationConfig {
    /// Fluctuators with constant decoupling and forward estimation at the
    /// standard operating point.
    fn default() -> Self {
        Self {
            dt: 0.001,
            control_step: 0.01,
            loop_delay: 0.5,
            t_final: 150.0,
            measurement: MeasurementConfig::new(1.0, 0.5).expect("valid defaults"),
            environment: NoiseEnvironment::Fluctuators,
            gamma2: 1.0 / 50.0,
            noise_amplitude: None,
            band: FluctuatorBand::default(),
            strategy: Strategy::ConstantDD(TAU * 25.0),
            estimation: Estimation::ForwardEstimation,
            record_mode: RecordMode::Deterministic,
            filter_dephasing: None,
            include_forward_dephasing: false,
            filter_substeps: 1,
            initial: InitialState::PlusPlus,
            seed: 1,
            n_traj: 1000,
            checkpoint_every: 1,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::InvalidConfig(m));
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        if self.loop_delay > 0.0 && self.loop_delay < self.control_step {
            return bad(format!("loop delay {} is shorter than the control step {}", self.loop_delay, self.control_step));
        }
        let cycles = self.t_final / self.control_step;
        if (cycles - cycles.round()).abs() > 1e-6 * cycles.max(1.0) {
            return bad(format!("t_final {} is not a multiple of the control step {}", self.t_final, self.control_step));
        }
        if !(self.gamma2 >= 0.0 && self.gamma2.is_finite()) {
            return bad(format!("gamma2 must be nonnegative, got {}", self.gamma2));
        }
        if let Some(w) = self.noise_amplitude {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("noise amplitude must be nonnegative, got {w}"));
            }
        }
        if self.n_traj == 0 {
            return bad("n_traj must be at least 1".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be at least 1".into());
        }
        self.band.validate()?;
        self.controller_config().validate()?;
        Ok(())
    }

    /// `Γ_fl`, the part of `Γ₂` carried by frequency noise.
    pub fn fluctuation_rate(&self) -> f64 {
        match self.environment {
            NoiseEnvironment::FluctuatorsPlusT1 => 0.5 * self.gamma2,
            _ => self.gamma2,
        }
    }

    /// `T₁ = 1/Γ₂` when relaxation carries half the dephasing, else ∞.
    pub fn t1(&self) -> f64 {
        match self.environment {
            NoiseEnvironment::FluctuatorsPlusT1 if self.gamma2 > 0.0 => 1.0 / self.gamma2,
            _ => f64::INFINITY,
        }
    }

    /// `ω` from the conversion law at `Γ_fl` (white noise uses `τ = dt`).
    pub fn resolved_noise_amplitude(&self) -> f64 {
        self.noise_amplitude.unwrap_or_else(|| {
            let g = self.fluctuation_rate();
            if g > 0.0 {
                omega_for_gamma2(self.environment.kind(), g, self.dt)
            } else {
                0.0
            }
        })
    }

    /// Per-qubit dephasing the filter assumes. A constant decoupling drive
    /// lowers the effective rate: to `Γ_fl/2` for white noise, and along the
    /// nominal `Γ_eff(Δ)` law (capped at `Γ_fl`) for fluctuators.
    pub fn resolved_filter_dephasing(&self) -> f64 {
        if let Some(g) = self.filter_dephasing {
            return g;
        }
        let g = self.fluctuation_rate();
        match (self.strategy, self.environment.kind()) {
            (Strategy::ConstantDD(d), _) if d == 0.0 || g == 0.0 => g,
            (Strategy::ConstantDD(d), NoiseKind::White) if d.abs() > 0.5 * g => 0.5 * g,
            (Strategy::ConstantDD(d), NoiseKind::Fluctuators) => {
                nominal_effective_dephasing(g, d.abs(), self.band.geometric_mean_rate())
            }
            _ => g,
        }
    }

    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            strategy: self.strategy,
            estimation: self.estimation,
            record_mode: self.record_mode,
            dt: self.dt,
            control_step: self.control_step,
            loop_delay: self.loop_delay,
            measurement: self.measurement,
            filter_dephasing_rate: self.resolved_filter_dephasing(),
            t1: self.t1(),
            include_forward_dephasing: self.include_forward_dephasing,
            filter_substeps: self.filter_substeps,
        }
    }

    pub fn n_cycles(&self) -> usize {
        (self.t_final / self.control_step).round() as usize
    }

    pub fn n_checkpoints(&self) -> usize {
        self.n_cycles() / self.checkpoint_every + 1
    }

    pub fn checkpoint_times(&self) -> Vec<f64> {
        (0..self.n_checkpoints()).map(|k| (k * self.checkpoint_every) as f64 * self.control_step).collect()
    }

    /// The system's decoherence channel per `dt`: inefficiency dephasing and
    /// relaxation. Frequency noise enters through the Hamiltonian instead.
    pub fn system_channel(&self) -> Result<LindbladChannel, SimulationError> {
        Ok(ChannelBuilder::new()
            .relaxation(self.t1())
            .measurement_dephasing(self.measurement.eta(), self.measurement.gamma())
            .build(self.dt)?)
    }

    /// Conditions worth flagging in run manifests.
    pub fn notes(&self) -> Vec<String> {
        let mut notes = Vec::new();
        if self.strategy == Strategy::OptimalDD && self.loop_delay > 0.0 {
            notes.push("optimal_dd: delta = 0 until the first command arrives (first loop-delay window)".into());
        }
        if self.filter_dephasing.is_none() {
            notes.push(format!("filter dephasing rate resolved to {:e} per us", self.resolved_filter_dephasing()));
        }
        notes
    }
}

/// Commands in transit from the controller to the system.
#[derive(Debug, Clone)]
pub struct SignalDelayLine {
    queue: VecDeque<DriveCommand>,
}

impl SignalDelayLine {
    /// `depth = ⌊τ_d/δt⌋` commands, prefilled with `idle`.
    pub fn new(depth: usize, idle: DriveCommand) -> Self {
        Self { queue: std::iter::repeat_n(idle, depth).collect() }
    }

    pub fn depth(&self) -> usize {
        self.queue.len()
    }

    /// Sends `cmd` and returns the command arriving at the system for the
    /// next cycle. A command issued at the end of cycle `k` acts during cycle
    /// `k + 1 + depth`, i.e. from `t_issue + depth·δt`.
    pub fn push(&mut self, cmd: DriveCommand) -> DriveCommand {
        self.queue.push_back(cmd);
        self.queue.pop_front().expect("queue holds at least the pushed command")
    }
}

/// Fixed per-run quantities for [`step_system`].
#[derive(Debug, Clone)]
pub struct StepContext {
    pub dt: f64,
    /// `ηΓdt`
    pub strength: f64,
    pub channel: LindbladChannel,
    /// `ω`
    pub noise_amplitude: f64,
}

impl StepContext {
    pub fn new(cfg: &SimulationConfig) -> Result<Self, SimulationError> {
        Ok(Self {
            dt: cfg.dt,
            strength: cfg.measurement.strength(cfg.dt),
            channel: cfg.system_channel()?,
            noise_amplitude: cfg.resolved_noise_amplitude(),
        })
    }
}

/// One `dt` step `ρ ↦ U ∘ L ∘ M_r [ρ]` on a raw matrix.
#[inline]
pub fn step_system_in_place(
    rho: &mut Mat4,
    r: f64,
    acting: &DriveCommand,
    chi: (f64, f64),
    ctx: &StepContext,
) -> Result<(), SimulationError> {
    bayesian_update_in_place(rho, r, ctx.strength)?;
    ctx.channel.apply_in_place(rho);
    let u = total_unitary(acting.omega, acting.delta, chi.0, chi.1, ctx.noise_amplitude, ctx.dt);
    conjugate_in_place(rho, &u);
    Ok(())
}

pub fn step_system(
    state: &TwoQubitState,
    r: f64,
    acting: &DriveCommand,
    chi: (f64, f64),
    ctx: &StepContext,
) -> Result<TwoQubitState, SimulationError> {
    let mut rho = *state.matrix();
    step_system_in_place(&mut rho, r, acting, chi, ctx)?;
    Ok(TwoQubitState::from_matrix_unchecked(rho))
}

enum NoiseSource {
    Quiet,
    Fluctuators(FluctuatorSet, FluctuatorSet),
    White(ChaCha8Rng, ChaCha8Rng),
}

impl NoiseSource {
    fn new(cfg: &SimulationConfig, index: u64) -> Result<Self, SimulationError> {
        if cfg.resolved_noise_amplitude() == 0.0 {
            return Ok(NoiseSource::Quiet);
        }
        let mut r1 = seeding::stream(cfg.seed, index, seeding::QUBIT1_NOISE);
        let mut r2 = seeding::stream(cfg.seed, index, seeding::QUBIT2_NOISE);
        Ok(match cfg.environment.kind() {
            NoiseKind::Fluctuators => NoiseSource::Fluctuators(
                build_fluctuator_set(&cfg.band, cfg.t_final, &mut r1)?,
                build_fluctuator_set(&cfg.band, cfg.t_final, &mut r2)?,
            ),
            NoiseKind::White => NoiseSource::White(r1, r2),
        })
    }
}

enum NoiseReader<'a> {
    Quiet,
    Fluctuators(FluctuatorCursor<'a>, FluctuatorCursor<'a>),
    White(&'a mut ChaCha8Rng, &'a mut ChaCha8Rng),
}

impl NoiseReader<'_> {
    /// `(χ₁, χ₂)` held over `[t, t + dt)`.
    #[inline]
    fn next(&mut self, t: f64) -> (f64, f64) {
        match self {
            NoiseReader::Quiet => (0.0, 0.0),
            NoiseReader::Fluctuators(a, b) => (a.value(t), b.value(t)),
            NoiseReader::White(a, b) => (a.sample(StandardNormal), b.sample(StandardNormal)),
        }
    }
}

/// Per-cycle diagnostic trace of one trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Traces {
    pub t: Vec<f64>,
    /// `r̃` of the cycle.
    pub record: Vec<f64>,
    pub omega_issued: Vec<f64>,
    pub delta_issued: Vec<f64>,
    /// The command that acted on the system during the cycle.
    pub omega_acting: Vec<f64>,
    pub delta_acting: Vec<f64>,
    pub fidelity_sys: Vec<f64>,
    pub fidelity_est: Vec<f64>,
    /// Record gain `P` of the filtered estimate (NaN when degenerate).
    pub gain: Vec<f64>,
}

impl Traces {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_us,record,omega_issued,delta_issued,omega_acting,delta_acting,F_sys,F_est,gain")?;
        for i in 0..self.t.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                self.t[i],
                self.record[i],
                self.omega_issued[i],
                self.delta_issued[i],
                self.omega_acting[i],
                self.delta_acting[i],
                self.fidelity_sys[i],
                self.fidelity_est[i],
                self.gain[i]
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryResult {
    pub index: usize,
    pub seed_tag: u64,
    /// `⟨ψ+|ρ_sys|ψ+⟩` at each checkpoint (empty unless series are kept).
    pub fidelity_sys: Vec<f64>,
    pub fidelity_est: Vec<f64>,
    pub final_sys: TwoQubitState,
    pub final_est: TwoQubitState,
    pub degenerate_cycles: u64,
    /// Cycles whose state needed the positivity clip.
    pub repairs: u64,
    pub traces: Option<Traces>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Keep each trajectory's fidelity series.
    pub keep_series: bool,
    /// Record per-cycle traces for trajectories with index below this.
    pub trace_trajectories: usize,
    /// Continue past failed trajectories, averaging the survivors.
    pub allow_partial: bool,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

/// Cholesky test for a Hermitian matrix. (nalgebra's complex Cholesky takes
/// complex square roots of negative pivots, so it cannot be used as a test.)
fn is_positive_definite(m: &Mat4) -> bool {
    let mut l = Mat4::zeros();
    for j in 0..4 {
        let mut d = m[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        l[(j, j)] = C64::from(d);
        for i in j + 1..4 {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = v / d;
        }
    }
    true
}

/// Checks the state invariants, clipping float dust off the spectrum.
/// Returns whether a clip was needed.
fn checkpoint_state(rho: &mut Mat4) -> Result<bool, StateError> {
    if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(StateError::NonFinite);
    }
    let mut herm = 0.0f64;
    for i in 0..4 {
        for j in i..4 {
            herm = herm.max((rho[(i, j)] - rho[(j, i)].conj()).norm());
        }
    }
    if herm > HERMITIAN_TOL {
        return Err(StateError::NotHermitian(herm));
    }
    let tr = rho.trace().re;
    if (tr - 1.0).abs() > TRACE_TOL {
        return Err(StateError::Trace(tr));
    }
    // exact Hermitian part, unit trace
    let sym = (*rho + rho.adjoint()) * C64::from(0.5 / tr);
    *rho = sym;
    if is_positive_definite(&sym) {
        return Ok(false);
    }
    // singular or slightly indefinite: decide with the spectrum
    if !is_positive_definite(&(sym + Mat4::identity() * C64::from(POSITIVITY_TOL))) {
        let min = TwoQubitState::from_matrix_unchecked(sym).min_eigenvalue();
        return Err(StateError::NotPositive(min));
    }
    let min = TwoQubitState::from_matrix_unchecked(sym).min_eigenvalue();
    if min >= 0.0 {
        return Ok(false);
    }
    *rho = *TwoQubitState::from_matrix_unchecked(sym).repair_positivity()?.matrix();
    Ok(true)
}

/// Values per checkpoint in the ensemble accumulator: `ρ_sys` (16 re, 16 im),
/// `ρ_est` (same), `F_sys`, `F_sys²`.
const SLOT: usize = 66;

fn accumulate(slot: &mut [f64], sys: &Mat4, est: &Mat4) {
    for (k, z) in sys.iter().enumerate() {
        slot[k] += z.re;
        slot[16 + k] += z.im;
    }
    for (k, z) in est.iter().enumerate() {
        slot[32 + k] += z.re;
        slot[48 + k] += z.im;
    }
    let f = fidelity_to_target(&TwoQubitState::from_matrix_unchecked(*sys));
    slot[64] += f;
    slot[65] += f * f;
}

fn simulate(
    cfg: &SimulationConfig,
    index: usize,
    keep_series: bool,
    traces: bool,
    mut sink: impl FnMut(usize, &Mat4, &Mat4),
) -> Result<TrajectoryResult, SimulationError> {
    let seed_tag = seeding::trajectory_tag(cfg.seed, index as u64);
    let fault = |step: usize, e: SimulationError| SimulationError::Trajectory { index, seed: seed_tag, step, source: Box::new(e) };

    let ctx = StepContext::new(cfg).map_err(|e| fault(0, e))?;
    let ctrl_cfg = cfg.controller_config();
    let initial = cfg.initial.state();
    let mut controller = Controller::new(ctrl_cfg, initial).map_err(|e| fault(0, e.into()))?;
    let mut line = SignalDelayLine::new(ctrl_cfg.delay_cycles(), ctrl_cfg.idle_command());
    let mut acting = ctrl_cfg.idle_command();

    let mut xi_rng = seeding::stream(cfg.seed, index as u64, seeding::MEASUREMENT);
    let mut source = NoiseSource::new(cfg, index as u64).map_err(|e| fault(0, e))?;
    let mut noise = match &mut source {
        NoiseSource::Quiet => NoiseReader::Quiet,
        NoiseSource::Fluctuators(a, b) => NoiseReader::Fluctuators(a.cursor(), b.cursor()),
        NoiseSource::White(a, b) => NoiseReader::White(a, b),
    };

    let n_sub = ctrl_cfg.substeps();
    let n_cycles = cfg.n_cycles();
    let record_std = cfg.measurement.record_std(cfg.dt);
    let mut rho = *initial.matrix();
    let mut fs = Vec::new();
    let mut fe = Vec::new();
    let mut trace = traces.then(Traces::default);
    let mut repairs = 0;

    let mut record_checkpoint = |k: usize, rho: &Mat4, est: &Mat4| {
        sink(k, rho, est);
        if keep_series {
            fs.push(fidelity_to_target(&TwoQubitState::from_matrix_unchecked(*rho)));
            fe.push(fidelity_to_target(&TwoQubitState::from_matrix_unchecked(*est)));
        }
    };
    record_checkpoint(0, &rho, initial.matrix());

    for c in 0..n_cycles {
        let mut r_sum = 0.0;
        for s in 0..n_sub {
            let step = c * n_sub + s;
            let t = step as f64 * cfg.dt;
            let xi: f64 = xi_rng.sample(StandardNormal);
            let r = half_parity_expectation(&rho) + record_std * xi;
            let chi = noise.next(t);
            step_system_in_place(&mut rho, r, &acting, chi, &ctx).map_err(|e| fault(step, e))?;
            r_sum += r;
        }
        let last_step = (c + 1) * n_sub - 1;
        let r_avg = r_sum / n_sub as f64;
        let t_end = (c + 1) as f64 * cfg.control_step;
        let out = controller.control_cycle(r_avg, t_end).map_err(|e| fault(last_step, e.into()))?;
        let was_acting = acting;
        acting = line.push(out.issued);
        debug_assert_eq!(acting, out.next_acting);

        if checkpoint_state(&mut rho).map_err(|e| fault(last_step, e.into()))? {
            repairs += 1;
        }
        // the estimate is never rebuilt from scratch, so its float dust
        // would otherwise compound over long runs
        if checkpoint_state(controller.estimate_matrix_mut()).map_err(|e| fault(last_step, e.into()))? {
            repairs += 1;
        }
        let est = controller.estimate();

        if let Some(tr) = trace.as_mut() {
            tr.t.push(t_end);
            tr.record.push(r_avg);
            tr.omega_issued.push(out.issued.omega);
            tr.delta_issued.push(out.issued.delta);
            tr.omega_acting.push(was_acting.omega);
            tr.delta_acting.push(was_acting.delta);
            tr.fidelity_sys.push(fidelity_to_target(&TwoQubitState::from_matrix_unchecked(rho)));
            tr.fidelity_est.push(out.fidelity_estimate);
            tr.gain.push(record_gain(&bell_decompose(&est)).unwrap_or(f64::NAN));
        }
        if (c + 1) % cfg.checkpoint_every == 0 {
            record_checkpoint((c + 1) / cfg.checkpoint_every, &rho, est.matrix());
        }
    }

    Ok(TrajectoryResult {
        index,
        seed_tag,
        fidelity_sys: fs,
        fidelity_est: fe,
        final_sys: TwoQubitState::from_matrix_unchecked(rho),
        final_est: controller.estimate(),
        degenerate_cycles: controller.degenerate_cycles(),
        repairs,
        traces: trace,
    })
}

/// Runs trajectory `index` of the ensemble defined by `cfg` (its random
/// streams derive from `cfg.seed` and `index`), keeping the fidelity series
/// and per-cycle traces.
pub fn run_trajectory(cfg: &SimulationConfig, index: usize) -> Result<TrajectoryResult, SimulationError> {
    cfg.validate()?;
    simulate(cfg, index, true, true, |_, _, _| {})
}

/// Like [`run_trajectory`] without series or traces, handing each stored
/// checkpoint `(k, ρ_sys, ρ_est)` to `inspect` (after the invariant checks
/// and any positivity repair).
pub fn run_trajectory_inspect(
    cfg: &SimulationConfig,
    index: usize,
    inspect: impl FnMut(usize, &Mat4, &Mat4),
) -> Result<TrajectoryResult, SimulationError> {
    cfg.validate()?;
    simulate(cfg, index, false, false, inspect)
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    /// Ensemble mean of `ρ_sys` at each checkpoint.
    pub mean_sys: Vec<Mat4>,
    pub mean_est: Vec<Mat4>,
    /// `⟨ψ+|ρ̄_sys|ψ+⟩`
    pub fidelity_sys: Vec<f64>,
    pub fidelity_est: Vec<f64>,
    /// Standard error of the mean of per-trajectory `F_sys`.
    pub stderr: Vec<f64>,
    pub trajectories: Vec<TrajectoryResult>,
    pub failures: Vec<SimulationError>,
}

impl EnsembleResult {
    pub fn n_ok(&self) -> usize {
        self.trajectories.len()
    }

    pub fn final_fidelity(&self) -> f64 {
        *self.fidelity_sys.last().expect("at least one checkpoint")
    }

    /// Mean of `F_sys` over checkpoints in `[t_from, t_to]`.
    pub fn time_averaged_fidelity(&self, t_from: f64, t_to: f64) -> f64 {
        let vals: Vec<f64> = self
            .times
            .iter()
            .zip(&self.fidelity_sys)
            .filter(|(t, _)| **t >= t_from - 1e-9 && **t <= t_to + 1e-9)
            .map(|(_, f)| *f)
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    pub fn write_fidelity_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_us,F_sys,F_est,stderr")?;
        for i in 0..self.times.len() {
            writeln!(out, "{},{},{},{}", self.times[i], self.fidelity_sys[i], self.fidelity_est[i], self.stderr[i])?;
        }
        Ok(())
    }
}

/// Runs `cfg.n_traj` trajectories in parallel and averages the states.
///
/// Trajectory `i` draws from the seed streams `(cfg.seed, i, ·)` (see
/// [`crate::seeding`]) and the reduction runs in index order, so results are
/// bit-identical for any worker count.
pub fn run_ensemble(cfg: &SimulationConfig, opts: &RunOptions) -> Result<EnsembleResult, SimulationError> {
    cfg.validate()?;
    let n_ckpt = cfg.n_checkpoints();
    let (sums, results) = with_workers(opts.workers, || {
        ordered_fold(cfg.n_traj, n_ckpt * SLOT, |i, acc| {
            let mut local = vec![0.0; n_ckpt * SLOT];
            let res = simulate(cfg, i, opts.keep_series, i < opts.trace_trajectories, |k, sys, est| {
                accumulate(&mut local[k * SLOT..(k + 1) * SLOT], sys, est)
            });
            if res.is_ok() {
                acc.iter_mut().zip(&local).for_each(|(a, l)| *a += l);
            }
            res
        })
    });
    let mut trajectories = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(t) => trajectories.push(t),
            Err(e) => failures.push(e),
        }
    }
    if let Some(first) = failures.first() {
        if !opts.allow_partial || trajectories.is_empty() {
            return Err(first.clone());
        }
    }
    let n = trajectories.len() as f64;
    let mut mean_sys = Vec::with_capacity(n_ckpt);
    let mut mean_est = Vec::with_capacity(n_ckpt);
    let mut fidelity_sys = Vec::with_capacity(n_ckpt);
    let mut fidelity_est = Vec::with_capacity(n_ckpt);
    let mut stderr = Vec::with_capacity(n_ckpt);
    for k in 0..n_ckpt {
        let slot = &sums[k * SLOT..(k + 1) * SLOT];
        let sys = Mat4::from_fn(|i, j| C64::new(slot[i + 4 * j], slot[16 + i + 4 * j]) / n);
        let est = Mat4::from_fn(|i, j| C64::new(slot[32 + i + 4 * j], slot[48 + i + 4 * j]) / n);
        fidelity_sys.push(fidelity_to_target(&TwoQubitState::from_matrix_unchecked(sys)));
        fidelity_est.push(fidelity_to_target(&TwoQubitState::from_matrix_unchecked(est)));
        let mean_f = slot[64] / n;
        let var = (slot[65] / n - mean_f * mean_f).max(0.0);
        stderr.push(if n > 1.0 { (var / (n - 1.0)).sqrt() } else { 0.0 });
        mean_sys.push(sys);
        mean_est.push(est);
    }
    Ok(EnsembleResult {
        times: cfg.checkpoint_times(),
        mean_sys,
        mean_est,
        fidelity_sys,
        fidelity_est,
        stderr,
        trajectories,
        failures,
    })
}
