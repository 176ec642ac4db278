//! Single-qubit calibration of the noise models.
//!
//! Ramsey ensembles map a noise amplitude `ω` to a characteristic dephasing
//! rate `Γ₂` through the stretched-exponential fit `x(t) = exp(−(Γ₂t)^β)`.
//! Driven ensembles map a decoupling drive `Δ` to the effective rate `Γ_eff`
//! fitted to the purity decay `P(t) = (1 + e^{−2Γ_eff t})/2`.
//!
//! Everything here runs on a 2×2 (Bloch vector) fast path; the two-qubit
//! engine is not involved.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FitError, NoiseError};
use crate::noise::psd::linear_fit;
use crate::noise::{build_fluctuator_set, FluctuatorBand, FluctuatorSet, WhiteNoiseProcess};
use crate::parallel::ordered_sum;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Fluctuators,
    White,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Fluctuators => "fluctuators",
            NoiseKind::White => "white",
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fluctuators" | "fluctuator" => Ok(NoiseKind::Fluctuators),
            "white" => Ok(NoiseKind::White),
            other => Err(format!("unknown noise kind `{other}` (expected fluctuators or white)")),
        }
    }
}

/// `γ_geom` of the default fluctuator band, π rad/μs.
pub fn default_gamma_geom() -> f64 {
    FluctuatorBand::default().geometric_mean_rate()
}

/// A power law `y/ref = prefactor · (x/ref)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversionLaw {
    pub prefactor: f64,
    pub exponent: f64,
    pub reference: f64,
}

impl ConversionLaw {
    /// Nominal fluctuator law `Γ₂/γ_geom = 0.12(ω/γ_geom)^1.55`.
    pub fn nominal_fluctuators() -> Self {
        Self { prefactor: 0.12, exponent: 1.55, reference: default_gamma_geom() }
    }

    /// Nominal white-noise law `Γ₂dt = 0.49(ωdt)^1.99`.
    pub fn nominal_white(dt: f64) -> Self {
        Self { prefactor: 0.49, exponent: 1.99, reference: 1.0 / dt }
    }

    /// `y(x)`.
    pub fn apply(&self, x: f64) -> f64 {
        self.reference * self.prefactor * (x / self.reference).powf(self.exponent)
    }

    /// `x(y)`, the inverse law.
    pub fn invert(&self, y: f64) -> f64 {
        self.reference * (y / (self.reference * self.prefactor)).powf(1.0 / self.exponent)
    }

    /// Log-log least squares through `(x, y)` pairs.
    pub fn fit(points: &[(f64, f64)], reference: f64) -> Result<Self, FitError> {
        let logs: Vec<(f64, f64)> = points
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|(x, y)| ((x / reference).ln(), (y / reference).ln()))
            .collect();
        if logs.len() < 2 {
            return Err(FitError::TooFewPoints(logs.len()));
        }
        let (exponent, intercept) = linear_fit(&logs);
        Ok(Self { prefactor: intercept.exp(), exponent, reference })
    }
}

/// Noise amplitude producing a target `Γ₂`.
///
/// Fluctuators: `ω = 3.9γ_geom(Γ₂/γ_geom)^0.65` for the default band.
/// White noise with `τ = dt`: `ω = √(2Γ₂/dt)`.
pub fn omega_for_gamma2(kind: NoiseKind, gamma2: f64, dt: f64) -> f64 {
    match kind {
        NoiseKind::Fluctuators => {
            let g = default_gamma_geom();
            3.9 * g * (gamma2 / g).powf(0.65)
        }
        NoiseKind::White => (2.0 * gamma2 / dt).sqrt(),
    }
}

/// Nominal decoupling law `Γ_eff = Γ₂ · 0.09(γ_geom/Γ₂)^0.71(Γ₂/Δ)^1.1`,
/// capped at `Γ₂`. Meant for fluctuator noise at `Δ ≫ Γ₂`.
pub fn nominal_effective_dephasing(gamma2: f64, delta: f64, gamma_geom: f64) -> f64 {
    if delta <= 0.0 {
        return gamma2;
    }
    let g = gamma2 * 0.09 * (gamma_geom / gamma2).powf(0.71) * (gamma2 / delta).powf(1.1);
    g.min(gamma2)
}

// ---------------------------------------------------------------------------
// Ramsey ensembles

#[derive(Debug, Clone, PartialEq)]
pub struct RamseySpec {
    pub noise: NoiseKind,
    /// rad/μs
    pub omega: f64,
    pub n_traj: usize,
    /// μs
    pub t_final: f64,
    /// Noise step for white noise, sample spacing for both kinds (μs).
    pub dt: f64,
    /// Record every `sample_every` steps.
    pub sample_every: usize,
    pub seed: u64,
    pub band: FluctuatorBand,
}

impl RamseySpec {
    pub fn new(noise: NoiseKind, omega: f64, n_traj: usize, t_final: f64, dt: f64, seed: u64) -> Self {
        Self { noise, omega, n_traj, t_final, dt, sample_every: 1, seed, band: FluctuatorBand::default() }
    }

    fn validate(&self) -> Result<(), NoiseError> {
        if self.n_traj < 100 {
            return Err(NoiseError::InvalidParameter(format!("Ramsey ensembles need n_traj >= 100, got {}", self.n_traj)));
        }
        if !(self.dt > 0.0 && self.t_final >= self.dt) {
            return Err(NoiseError::InvalidDuration(self.t_final));
        }
        if self.sample_every == 0 || !self.omega.is_finite() {
            return Err(NoiseError::InvalidParameter("sample_every must be >= 1 and ω finite".into()));
        }
        self.band.validate()
    }

    fn n_steps(&self) -> usize {
        (self.t_final / self.dt + 1e-9).floor() as usize
    }
}

/// Ensemble-averaged decay curve with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl DecayCurve {
    fn from_sums(times: Vec<f64>, sums: &[f64], n: usize) -> Self {
        let m = times.len();
        let nf = n as f64;
        let mean: Vec<f64> = sums[..m].iter().map(|s| s / nf).collect();
        let stderr = sums[m..]
            .iter()
            .zip(&mean)
            .map(|(sq, mu)| ((sq / nf - mu * mu).max(0.0) / (nf - 1.0).max(1.0)).sqrt())
            .collect();
        Self { times, mean, stderr }
    }

    pub fn fit(&self) -> Result<CalibrationFit, FitError> {
        fit_stretched_exponential(&self.times, &self.mean, Some(&self.stderr))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_us,mean,stderr")?;
        for i in 0..self.times.len() {
            writeln!(out, "{},{},{}", self.times[i], self.mean[i], self.stderr[i])?;
        }
        Ok(())
    }
}

/// `x(t) = ⟨cos φ(t)⟩` for `|+x⟩` under `ωχ(t)σz/2`, with `φ = ω∫χ`.
pub fn ramsey_ensemble(spec: &RamseySpec) -> Result<DecayCurve, NoiseError> {
    spec.validate()?;
    let n_steps = spec.n_steps();
    let times: Vec<f64> = (0..=n_steps).step_by(spec.sample_every).map(|k| k as f64 * spec.dt).collect();
    let m = times.len();
    let sums = ordered_sum(spec.n_traj, 2 * m, |i, acc| {
        let phases = match spec.noise {
            NoiseKind::Fluctuators => {
                let mut rng = seeding::stream(spec.seed, i as u64, seeding::QUBIT1_NOISE);
                let set = build_fluctuator_set(&spec.band, times[m - 1].max(spec.dt), &mut rng)?;
                fluctuator_phases(&set, &times)
            }
            NoiseKind::White => {
                let mut rng = seeding::stream(spec.seed, i as u64, seeding::QUBIT1_NOISE);
                let noise = WhiteNoiseProcess::unit();
                let mut phases = Vec::with_capacity(m);
                let mut phi = 0.0;
                for k in 0..=n_steps {
                    if k % spec.sample_every == 0 {
                        phases.push(phi);
                    }
                    phi += noise.sample(&mut rng) * spec.dt;
                }
                phases
            }
        };
        for (k, p) in phases.iter().enumerate() {
            let c = (spec.omega * p).cos();
            acc[k] += c;
            acc[m + k] += c * c;
        }
        Ok::<(), NoiseError>(())
    })?;
    Ok(DecayCurve::from_sums(times, &sums, spec.n_traj))
}

/// `∫₀ᵗ χ` on nondecreasing sample times, integrating each fluctuator over its
/// own switch list (no merged event list needed).
pub fn fluctuator_phases(set: &FluctuatorSet, times: &[f64]) -> Vec<f64> {
    let mut phases = vec![0.0; times.len()];
    for (switches, &s0) in set.switch_times().iter().zip(set.initial_signs()) {
        let mut sign = s0 as f64;
        let (mut integral, mut last, mut j) = (0.0, 0.0, 0);
        for (p, &t) in phases.iter_mut().zip(times) {
            while j < switches.len() && switches[j] <= t {
                integral += sign * (switches[j] - last);
                last = switches[j];
                sign = -sign;
                j += 1;
            }
            *p += integral + sign * (t - last);
        }
    }
    let n = set.len() as f64;
    phases.iter_mut().for_each(|p| *p /= n);
    phases
}

// ---------------------------------------------------------------------------
// Stretched-exponential fit

const FIT_FLOOR: f64 = 0.05;
const MAX_STDERR: f64 = 0.05;
const BETA_BOUNDS: (f64, f64) = (0.5, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    /// 1/μs
    pub gamma2: f64,
    pub beta: f64,
    pub residual_rms: f64,
    /// Covariance of `(Γ₂, β)` from the final Jacobian.
    pub covariance: [[f64; 2]; 2],
    pub n_points: usize,
}

impl CalibrationFit {
    pub fn gamma2_stderr(&self) -> f64 {
        self.covariance[0][0].max(0.0).sqrt()
    }

    pub fn beta_stderr(&self) -> f64 {
        self.covariance[1][1].max(0.0).sqrt()
    }
}

fn stretched_sse(points: &[(f64, f64)], ln_g: f64, beta: f64) -> f64 {
    points
        .iter()
        .map(|&(t, x)| {
            let m = (-(beta * (ln_g + t.ln())).exp()).exp();
            (x - m).powi(2)
        })
        .sum()
}

/// Fits `x(t) = exp(−(Γ₂t)^β)`.
///
/// The window runs from the start until `x` first drops below 0.05, skipping
/// points whose standard error exceeds 0.05. Starting values come from a
/// linear regression of `ln(−ln x)` on `ln t` and a coarse grid over β; the
/// best start is refined by Levenberg–Marquardt in `(ln Γ₂, β)`.
pub fn fit_stretched_exponential(times: &[f64], x: &[f64], stderr: Option<&[f64]>) -> Result<CalibrationFit, FitError> {
    let mut points = Vec::new();
    for (i, (&t, &xi)) in times.iter().zip(x).enumerate() {
        if xi < FIT_FLOOR {
            break;
        }
        if stderr.is_some_and(|s| s[i] > MAX_STDERR) || !xi.is_finite() {
            continue;
        }
        // t = 0 carries no information (x = 1 for every parameter set)
        if t > 0.0 {
            points.push((t, xi));
        }
    }
    let crossing = points.iter().position(|p| p.1 < (-1.0f64).exp());
    let Some(ci) = crossing else {
        return Err(FitError::NotDecaying { threshold: (-1.0f64).exp() });
    };
    if points.len() < 3 {
        return Err(FitError::TooFewPoints(points.len()));
    }
    let t_e = if ci == 0 {
        points[0].0
    } else {
        let ((t0, x0), (t1, x1)) = (points[ci - 1], points[ci]);
        let target = (-1.0f64).exp();
        t0 + (t1 - t0) * (x0 - target) / (x0 - x1)
    };

    let mut starts: Vec<(f64, f64)> = Vec::new();
    let lin: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.1 > FIT_FLOOR && p.1 < 0.95)
        .map(|&(t, xi)| (t.ln(), (-xi.ln()).ln()))
        .collect();
    if lin.len() >= 2 {
        let (beta, c) = linear_fit(&lin);
        if beta.is_finite() && beta > 0.0 {
            starts.push((c / beta, beta.clamp(BETA_BOUNDS.0, BETA_BOUNDS.1)));
        }
    }
    for k in 0..=25 {
        starts.push((-t_e.ln(), BETA_BOUNDS.0 + 0.1 * k as f64));
    }
    let (mut p0, mut p1) = starts
        .iter()
        .copied()
        .min_by(|a, b| stretched_sse(&points, a.0, a.1).total_cmp(&stretched_sse(&points, b.0, b.1)))
        .expect("grid is nonempty");

    let mut lambda = 1e-3;
    let mut sse = stretched_sse(&points, p0, p1);
    let mut converged = false;
    let mut jtj = [[0.0; 2]; 2];
    for _ in 0..500 {
        let mut g = [0.0; 2];
        jtj = [[0.0; 2]; 2];
        for &(t, xi) in &points {
            let a = p0 + t.ln();
            let s = (p1 * a).exp();
            let m = (-s).exp();
            let j = [-m * s * p1, -m * s * a];
            let r = xi - m;
            for u in 0..2 {
                g[u] += j[u] * r;
                for v in 0..2 {
                    jtj[u][v] += j[u] * j[v];
                }
            }
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let a00 = jtj[0][0] * (1.0 + lambda);
            let a11 = jtj[1][1] * (1.0 + lambda);
            let det = a00 * a11 - jtj[0][1] * jtj[1][0];
            if det.abs() < f64::MIN_POSITIVE {
                lambda *= 10.0;
                continue;
            }
            let d0 = (a11 * g[0] - jtj[0][1] * g[1]) / det;
            let d1 = (a00 * g[1] - jtj[1][0] * g[0]) / det;
            let (q0, q1) = (p0 + d0, p1 + d1);
            let trial = stretched_sse(&points, q0, q1);
            if trial.is_finite() && trial <= sse {
                let step = (d0.abs() / (1.0 + p0.abs())).max(d1.abs() / (1.0 + p1.abs()));
                let stalled = sse - trial <= 1e-14 * sse && step < 1e-7;
                (p0, p1, sse) = (q0, q1, trial);
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                converged = step <= 1e-10 || stalled;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no downhill step at any damping: a stationary point
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(FitError::NoConvergence("Levenberg–Marquardt iteration limit".into()));
    }
    if !(BETA_BOUNDS.0..=BETA_BOUNDS.1).contains(&p1) {
        return Err(FitError::NoConvergence(format!("β = {p1:.3} outside [{}, {}]", BETA_BOUNDS.0, BETA_BOUNDS.1)));
    }
    let n = points.len();
    let gamma2 = p0.exp();
    let sigma2 = sse / (n.saturating_sub(2).max(1)) as f64;
    let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
    let inv = [[jtj[1][1] / det, -jtj[0][1] / det], [-jtj[1][0] / det, jtj[0][0] / det]];
    let covariance = [
        [sigma2 * inv[0][0] * gamma2 * gamma2, sigma2 * inv[0][1] * gamma2],
        [sigma2 * inv[1][0] * gamma2, sigma2 * inv[1][1]],
    ];
    Ok(CalibrationFit { gamma2, beta: p1, residual_rms: (sse / n as f64).sqrt(), covariance, n_points: n })
}

// ---------------------------------------------------------------------------
// ω ↔ Γ₂ sweeps

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub omega: f64,
    pub fit: CalibrationFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionCalibration {
    pub noise: NoiseKind,
    pub points: Vec<CalibrationPoint>,
    pub curves: Vec<DecayCurve>,
    /// `Γ₂(ω)`
    pub law: ConversionLaw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub n_traj: usize,
    /// White-noise step (μs); also `τ`.
    pub dt: f64,
    /// Approximate number of points per curve.
    pub samples: usize,
    /// Window length in units of the expected `1/Γ₂`.
    pub window: f64,
    pub seed: u64,
    pub band: FluctuatorBand,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { n_traj: 1000, dt: 0.01, samples: 400, window: 3.5, seed: 1, band: FluctuatorBand::default() }
    }
}

/// Runs a Ramsey ensemble per `ω`, fits each, and fits `Γ₂(ω)` as a power
/// law (reference `γ_geom` for fluctuators, `1/dt` for white noise).
pub fn calibrate_conversion(
    noise: NoiseKind,
    omegas: &[f64],
    opts: &SweepOptions,
) -> Result<ConversionCalibration, CalibrationError> {
    if omegas.is_empty() {
        return Err(CalibrationError::EmptyGrid("omega"));
    }
    let guess_law = match noise {
        NoiseKind::Fluctuators => ConversionLaw::nominal_fluctuators(),
        NoiseKind::White => ConversionLaw::nominal_white(opts.dt),
    };
    let mut points = Vec::with_capacity(omegas.len());
    let mut curves = Vec::with_capacity(omegas.len());
    for (j, &omega) in omegas.iter().enumerate() {
        let t_final = opts.window / guess_law.apply(omega);
        let mut spec = RamseySpec::new(noise, omega, opts.n_traj, t_final, opts.dt, opts.seed.wrapping_add(j as u64));
        spec.band = opts.band;
        match noise {
            NoiseKind::Fluctuators => spec.dt = t_final / opts.samples as f64,
            NoiseKind::White => spec.sample_every = ((t_final / opts.dt) / opts.samples as f64).ceil().max(1.0) as usize,
        }
        let curve = ramsey_ensemble(&spec)?;
        let fit = curve.fit()?;
        points.push(CalibrationPoint { omega, fit });
        curves.push(curve);
    }
    let reference = guess_law.reference;
    let law = ConversionLaw::fit(&points.iter().map(|p| (p.omega, p.fit.gamma2)).collect::<Vec<_>>(), reference)?;
    Ok(ConversionCalibration { noise, points, curves, law })
}

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("calibration grid `{0}` is empty")]
    EmptyGrid(&'static str),
    #[error("calibration table: {0}")]
    Table(String),
}

// ---------------------------------------------------------------------------
// Effective dephasing under a decoupling drive

#[derive(Debug, Clone, PartialEq)]
pub struct DrivenSpec {
    pub noise: NoiseKind,
    /// rad/μs
    pub omega: f64,
    /// rad/μs
    pub delta: f64,
    pub n_traj: usize,
    pub t_final: f64,
    /// White-noise step (μs).
    pub dt: f64,
    /// Number of sample intervals over `[0, t_final]`.
    pub samples: usize,
    pub seed: u64,
    pub band: FluctuatorBand,
}

/// Ensemble-averaged Bloch vector of a driven qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochCurve {
    pub times: Vec<f64>,
    pub mean: Vec<[f64; 3]>,
}

impl BlochCurve {
    /// `P = (1 + |r̄|²)/2`.
    pub fn purity(&self) -> Vec<f64> {
        self.mean.iter().map(|r| 0.5 * (1.0 + r[0] * r[0] + r[1] * r[1] + r[2] * r[2])).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_us,x,y,z,purity")?;
        for ((t, r), p) in self.times.iter().zip(&self.mean).zip(self.purity()) {
            writeln!(out, "{t},{},{},{},{p}", r[0], r[1], r[2])?;
        }
        Ok(())
    }
}

/// Exact rotation `r ← exp(θ k̂×) r` about axis `w` by angle `|w|·dt`.
#[inline]
fn rotate(r: &mut [f64; 3], w: [f64; 3], dt: f64) {
    let norm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    if norm == 0.0 || dt == 0.0 {
        return;
    }
    let k = [w[0] / norm, w[1] / norm, w[2] / norm];
    let (s, c) = (norm * dt).sin_cos();
    let kr = k[0] * r[0] + k[1] * r[1] + k[2] * r[2];
    let cross = [k[1] * r[2] - k[2] * r[1], k[2] * r[0] - k[0] * r[2], k[0] * r[1] - k[1] * r[0]];
    for i in 0..3 {
        r[i] = r[i] * c + cross[i] * s + k[i] * kr * (1.0 - c);
    }
}

/// Evolves `|+x⟩` under `Δσy/2 + ωχ(t)σz/2`, i.e. `ṙ = (0, Δ, ωχ) × r`.
/// Fluctuator paths are rotated exactly between switch events; white noise
/// is piecewise constant over `dt`.
pub fn driven_bloch_ensemble(spec: &DrivenSpec) -> Result<BlochCurve, NoiseError> {
    if spec.n_traj == 0 || spec.samples == 0 {
        return Err(NoiseError::InvalidParameter("driven ensemble needs n_traj >= 1 and samples >= 1".into()));
    }
    if !(spec.t_final > 0.0 && spec.dt > 0.0) {
        return Err(NoiseError::InvalidDuration(spec.t_final));
    }
    let (m, samples) = (spec.samples + 1, spec.samples);
    let (omega, delta) = (spec.omega, spec.delta);
    let (times, white_every) = match spec.noise {
        NoiseKind::Fluctuators => ((0..m).map(|k| spec.t_final * k as f64 / samples as f64).collect::<Vec<_>>(), 0),
        NoiseKind::White => {
            let n_steps = (spec.t_final / spec.dt).round().max(1.0) as usize;
            let every = n_steps.div_ceil(samples).max(1);
            ((0..m).map(|k| (k * every) as f64 * spec.dt).collect(), every)
        }
    };
    let sums = ordered_sum(spec.n_traj, 3 * m, |i, acc| {
        let mut rng = seeding::stream(spec.seed, i as u64, seeding::QUBIT1_NOISE);
        let mut r = [1.0, 0.0, 0.0];
        let mut push = |k: usize, r: &[f64; 3]| {
            for c in 0..3 {
                acc[3 * k + c] += r[c];
            }
        };
        match spec.noise {
            NoiseKind::Fluctuators => {
                let set = build_fluctuator_set(&spec.band, times[m - 1], &mut rng)?;
                let (bps, levels) = (set.breakpoints(), set.levels());
                let (mut t, mut e) = (0.0, 0);
                push(0, &r);
                for (k, &ts) in times.iter().enumerate().skip(1) {
                    while e < bps.len() && bps[e] <= ts {
                        rotate(&mut r, [0.0, delta, omega * levels[e]], bps[e] - t);
                        t = bps[e];
                        e += 1;
                    }
                    rotate(&mut r, [0.0, delta, omega * levels[e]], ts - t);
                    t = ts;
                    push(k, &r);
                }
            }
            NoiseKind::White => {
                let noise = WhiteNoiseProcess::unit();
                push(0, &r);
                for k in 1..m {
                    for _ in 0..white_every {
                        rotate(&mut r, [0.0, delta, omega * noise.sample(&mut rng)], spec.dt);
                    }
                    push(k, &r);
                }
            }
        }
        Ok::<(), NoiseError>(())
    })?;
    let n = spec.n_traj as f64;
    let mean = (0..m).map(|k| [sums[3 * k] / n, sums[3 * k + 1] / n, sums[3 * k + 2] / n]).collect();
    Ok(BlochCurve { times, mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurityFit {
    pub gamma_eff: f64,
    pub residual_rms: f64,
    pub n_points: usize,
}

/// Single-parameter fit of `P(t) = (1 + e^{−2Γt})/2`, over points until the
/// excess purity `2P − 1` first falls below 0.05. Golden-section search on
/// `ln Γ` (the residual is unimodal in Γ for monotone data).
pub fn fit_purity_decay(times: &[f64], purity: &[f64]) -> Result<PurityFit, FitError> {
    let mut points = Vec::new();
    for (&t, &p) in times.iter().zip(purity) {
        if 2.0 * p - 1.0 < FIT_FLOOR {
            break;
        }
        if t > 0.0 {
            points.push((t, p));
        }
    }
    if points.len() < 3 {
        return Err(FitError::TooFewPoints(points.len()));
    }
    let sse = |ln_g: f64| -> f64 {
        let g = ln_g.exp();
        points.iter().map(|&(t, p)| (p - 0.5 * (1.0 + (-2.0 * g * t).exp())).powi(2)).sum()
    };
    // bracket from the slope of ln(2P − 1) through the origin
    let (num, den) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(t, p)| (a - t * (2.0 * p - 1.0).ln(), b + t * t));
    let g0 = (num / den / 2.0).max(1e-12);
    let (mut a, mut b) = (g0.ln() - 4.0, g0.ln() + 4.0);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (sse(c), sse(d));
    while (b - a).abs() > 1e-10 {
        if fc < fd {
            (b, d, fd) = (d, c, fc);
            c = b - phi * (b - a);
            fc = sse(c);
        } else {
            (a, c, fc) = (c, d, fd);
            d = a + phi * (b - a);
            fd = sse(d);
        }
    }
    let ln_g = 0.5 * (a + b);
    if (ln_g - (g0.ln() - 4.0)).abs() < 1e-6 || (ln_g - (g0.ln() + 4.0)).abs() < 1e-6 {
        return Err(FitError::NoConvergence("purity fit hit the search bracket".into()));
    }
    Ok(PurityFit { gamma_eff: ln_g.exp(), residual_rms: (sse(ln_g) / points.len() as f64).sqrt(), n_points: points.len() })
}

/// One row of the `Γ_eff(Δ, Γ₂)` surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DephasingRow {
    pub noise: NoiseKind,
    pub delta_rad_per_us: f64,
    pub gamma2_per_us: f64,
    pub gamma_eff_per_us: f64,
    /// Stretched exponent of `|r̄(t)|`, NaN when that fit fails.
    pub beta: f64,
    pub residual_rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableOptions {
    pub n_traj: usize,
    pub dt: f64,
    pub samples: usize,
    /// Window in units of the expected `1/Γ_eff`.
    pub window: f64,
    /// Upper bound on any single run's duration (μs).
    pub max_t_final: f64,
    pub seed: u64,
    pub band: FluctuatorBand,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self { n_traj: 400, dt: 0.01, samples: 300, window: 2.0, max_t_final: 2000.0, seed: 11, band: FluctuatorBand::default() }
    }
}

/// Expected `Γ_eff`, used only to size the simulation window.
fn gamma_eff_guess(noise: NoiseKind, gamma2: f64, delta: f64, gamma_geom: f64) -> f64 {
    match noise {
        _ if delta == 0.0 => gamma2,
        NoiseKind::White if delta > 0.5 * gamma2 => 0.5 * gamma2,
        NoiseKind::White => gamma2,
        NoiseKind::Fluctuators => nominal_effective_dephasing(gamma2, delta, gamma_geom),
    }
}

/// Simulates and fits one `(Δ, Γ₂)` point, `ω` set by [`omega_for_gamma2`].
pub fn effective_dephasing(noise: NoiseKind, delta: f64, gamma2: f64, opts: &TableOptions, seed: u64) -> Result<(DephasingRow, BlochCurve), CalibrationError> {
    let guess = gamma_eff_guess(noise, gamma2, delta, opts.band.geometric_mean_rate());
    let spec = DrivenSpec {
        noise,
        omega: omega_for_gamma2(noise, gamma2, opts.dt),
        delta,
        n_traj: opts.n_traj,
        t_final: (opts.window / guess).min(opts.max_t_final),
        dt: opts.dt,
        samples: opts.samples,
        seed,
        band: opts.band,
    };
    let curve = driven_bloch_ensemble(&spec)?;
    let fit = fit_purity_decay(&curve.times, &curve.purity())?;
    let radius: Vec<f64> = curve.mean.iter().map(|r| (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()).collect();
    let beta = fit_stretched_exponential(&curve.times, &radius, None).map(|f| f.beta).unwrap_or(f64::NAN);
    let row = DephasingRow {
        noise,
        delta_rad_per_us: delta,
        gamma2_per_us: gamma2,
        gamma_eff_per_us: fit.gamma_eff,
        beta,
        residual_rms: fit.residual_rms,
    };
    Ok((row, curve))
}

/// The `Γ_eff` surface over a `Δ × Γ₂` grid.
pub fn effective_dephasing_table(
    deltas: &[f64],
    gamma2s: &[f64],
    noise: NoiseKind,
    opts: &TableOptions,
) -> Result<DephasingTable, CalibrationError> {
    if deltas.is_empty() {
        return Err(CalibrationError::EmptyGrid("delta"));
    }
    if gamma2s.is_empty() {
        return Err(CalibrationError::EmptyGrid("gamma2"));
    }
    let mut rows = Vec::with_capacity(deltas.len() * gamma2s.len());
    for (gi, &g2) in gamma2s.iter().enumerate() {
        for (di, &d) in deltas.iter().enumerate() {
            let seed = opts.seed.wrapping_add((gi * deltas.len() + di) as u64);
            rows.push(effective_dephasing(noise, d, g2, opts, seed)?.0);
        }
    }
    Ok(DephasingTable { rows })
}

/// Persisted `Γ_eff` table, read back by the engine's filter-rate lookup.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DephasingTable {
    pub rows: Vec<DephasingRow>,
}

impl DephasingTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CalibrationError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| CalibrationError::Table(e.to_string()))?;
        }
        w.flush().map_err(|e| CalibrationError::Table(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, CalibrationError> {
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(input).deserialize() {
            let row: DephasingRow = rec.map_err(|e| CalibrationError::Table(e.to_string()))?;
            if !(row.gamma2_per_us > 0.0 && row.delta_rad_per_us >= 0.0 && row.gamma_eff_per_us > 0.0) {
                return Err(CalibrationError::Table(format!("row with non-physical rates: {row:?}")));
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    /// `Γ_eff` at `(Δ, Γ₂)`: the row set with the nearest `Γ₂` (in log
    /// distance) is interpolated linearly in `(ln Δ, ln Γ_eff)` and clamped
    /// at the grid ends. The result is rescaled by the `Γ₂` mismatch.
    pub fn lookup(&self, noise: NoiseKind, delta: f64, gamma2: f64) -> Option<f64> {
        let nearest = self
            .rows
            .iter()
            .filter(|r| r.noise == noise)
            .map(|r| r.gamma2_per_us)
            .min_by(|a, b| (a / gamma2).ln().abs().total_cmp(&(b / gamma2).ln().abs()))?;
        let mut line: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.noise == noise && r.gamma2_per_us == nearest)
            .map(|r| (r.delta_rad_per_us, r.gamma_eff_per_us))
            .collect();
        line.sort_by(|a, b| a.0.total_cmp(&b.0));
        let scale = gamma2 / nearest;
        let at = |i: usize| line[i].1 * scale;
        if delta <= line[0].0 {
            return Some(at(0));
        }
        let last = line.len() - 1;
        if delta >= line[last].0 {
            return Some(at(last));
        }
        let j = line.partition_point(|p| p.0 <= delta);
        let ((d0, g0), (d1, g1)) = (line[j - 1], line[j]);
        if d0 <= 0.0 {
            // linear across the Δ = 0 row
            return Some(scale * (g0 + (g1 - g0) * delta / d1));
        }
        let w = (delta / d0).ln() / (d1 / d0).ln();
        Some(scale * (g0.ln() + w * (g1.ln() - g0.ln())).exp())
    }

    /// Power-law fit `Γ_eff ∝ Δ^exponent` over rows of one `Γ₂` with
    /// `Δ/Γ₂ ≥ min_ratio`. Returns the law in the `(Δ, Γ_eff)` variables.
    pub fn large_delta_law(&self, noise: NoiseKind, gamma2: f64, min_ratio: f64) -> Result<ConversionLaw, FitError> {
        let points: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.noise == noise && r.gamma2_per_us == gamma2 && r.delta_rad_per_us >= min_ratio * gamma2)
            .map(|r| (r.delta_rad_per_us, r.gamma_eff_per_us))
            .collect();
        ConversionLaw::fit(&points, gamma2)
    }
}
