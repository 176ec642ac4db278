//! Continuous half-parity readout: record sampling, Kraus backaction, and the
//! Bayesian state update shared by the system and the controller.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::MeasurementError;
use crate::quantum::{Mat4, TwoQubitState, C64, OPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementConfig {
    /// Ensemble measurement-dephasing rate Γ, 1/μs.
    gamma: f64,
    /// Collection efficiency η.
    eta: f64,
    /// `τ = 1/(2ηΓ)`, μs.
    tau: f64,
}

impl MeasurementConfig {
    pub fn new(gamma: f64, eta: f64) -> Result<Self, MeasurementError> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(MeasurementError::InvalidParameter(format!("measurement rate must be positive, got {gamma}")));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(MeasurementError::InvalidParameter(format!("efficiency must lie in (0, 1], got {eta}")));
        }
        Ok(Self { gamma, eta, tau: 1.0 / (2.0 * eta * gamma) })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `dt/2τ = ηΓdt`.
    #[inline]
    pub fn strength(&self, dt: f64) -> f64 {
        self.eta * self.gamma * dt
    }

    /// Standard deviation of a record bin, `√(τ/dt)`.
    #[inline]
    pub fn record_std(&self, dt: f64) -> f64 {
        (self.tau / dt).sqrt()
    }
}

/// A stream of record samples at fixed bin width.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementRecord {
    pub dt: f64,
    pub samples: Vec<f64>,
}

impl MeasurementRecord {
    pub fn new(dt: f64) -> Self {
        Self { dt, samples: Vec::new() }
    }

    pub fn push(&mut self, r: f64) {
        self.samples.push(r);
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t_us,r")?;
        for (i, r) in self.samples.iter().enumerate() {
            writeln!(out, "{},{r}", i as f64 * self.dt)?;
        }
        Ok(())
    }

    /// Little-endian `f64` samples, no header.
    pub fn write_binary<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.samples {
            out.write_all(&r.to_le_bytes())?;
        }
        Ok(())
    }
}

#[inline]
pub fn half_parity_expectation(rho: &Mat4) -> f64 {
    rho[(0, 0)].re - rho[(3, 3)].re
}

/// `r = Tr(ρN̂) + √(τ/dt)·ξ` for a given standard normal `ξ`.
#[inline]
pub fn record_from_noise(state: &TwoQubitState, cfg: &MeasurementConfig, dt: f64, xi: f64) -> f64 {
    half_parity_expectation(state.matrix()) + cfg.record_std(dt) * xi
}

pub fn sample_record<R: Rng + ?Sized>(state: &TwoQubitState, cfg: &MeasurementConfig, dt: f64, rng: &mut R) -> f64 {
    record_from_noise(state, cfg, dt, rng.sample(StandardNormal))
}

/// `log` of the diagonal of `M̂_r = exp[(dt/2τ)(rN̂ − N̂²/2)]`.
#[inline]
pub fn kraus_log_diagonal(r: f64, strength: f64) -> [f64; 4] {
    [strength * (r - 0.5), 0.0, 0.0, -strength * (r + 0.5)]
}

/// `M̂_r` in the computational basis, where it is diagonal.
pub fn kraus_operator(r: f64, cfg: &MeasurementConfig, dt: f64) -> Mat4 {
    let l = kraus_log_diagonal(r, cfg.strength(dt));
    Mat4::from_diagonal(&l.map(|v| C64::from(v.exp())).into())
}

/// The same operator assembled from its Bell-basis blocks: identity on the
/// odd subspace and
/// `e^{−dt/4τ}[cosh(x)(|φ+⟩⟨φ+| + |φ−⟩⟨φ−|) + sinh(x)(|φ+⟩⟨φ−| + |φ−⟩⟨φ+|)]`,
/// `x = r·dt/2τ`, on the even one.
pub fn kraus_operator_bell_form(r: f64, cfg: &MeasurementConfig, dt: f64) -> Mat4 {
    let k = cfg.strength(dt);
    let x = r * k;
    let damp = (-k / 2.0).exp();
    let mut bell = Mat4::zeros();
    bell[(0, 0)] = C64::from(1.0);
    bell[(1, 1)] = C64::from(1.0);
    bell[(2, 2)] = C64::from(damp * x.cosh());
    bell[(3, 3)] = C64::from(damp * x.cosh());
    bell[(2, 3)] = C64::from(damp * x.sinh());
    bell[(3, 2)] = C64::from(damp * x.sinh());
    let b = &OPS.bell_basis;
    b * bell * b.adjoint()
}

/// `ρ ↦ M̂_r ρ M̂_r† / Tr(M̂_r†M̂_r ρ)` on a raw matrix, with `dt/2τ` given as
/// `strength`. The diagonal weights are rescaled by the largest one carrying
/// population before exponentiation, so extreme records cannot overflow.
#[inline]
pub fn bayesian_update_in_place(rho: &mut Mat4, r: f64, strength: f64) -> Result<(), MeasurementError> {
    if !r.is_finite() {
        return Err(MeasurementError::InvalidParameter(format!("record sample {r} is not finite")));
    }
    let l = kraus_log_diagonal(r, strength);
    let mut shift = f64::NEG_INFINITY;
    for (i, &li) in l.iter().enumerate() {
        if rho[(i, i)].re > 0.0 && li > shift {
            shift = li;
        }
    }
    if !shift.is_finite() {
        return Err(MeasurementError::DegenerateNormalization(0.0));
    }
    let m = l.map(|li| (li - shift).min(300.0).exp());
    let norm: f64 = (0..4).map(|i| m[i] * m[i] * rho[(i, i)].re).sum();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(MeasurementError::DegenerateNormalization(norm));
    }
    for i in 0..4 {
        for j in 0..4 {
            rho[(i, j)] *= m[i] * m[j] / norm;
        }
    }
    Ok(())
}

pub fn bayesian_update(
    state: &TwoQubitState,
    r: f64,
    cfg: &MeasurementConfig,
    dt: f64,
) -> Result<TwoQubitState, MeasurementError> {
    let mut rho = *state.matrix();
    bayesian_update_in_place(&mut rho, r, cfg.strength(dt))?;
    Ok(TwoQubitState::from_matrix_unchecked(rho))
}

/// `|c(r)|² = √(dt/2πτ)·exp[−(dt/2τ)r²]`, the record density reference
/// weight that makes `{c(r)M̂_r}` a complete POVM.
pub fn record_weight(r: f64, cfg: &MeasurementConfig, dt: f64) -> f64 {
    (dt / (2.0 * PI * cfg.tau())).sqrt() * (-cfg.strength(dt) * r * r).exp()
}

/// Largest entry deviation of `∫dr |c(r)|² M̂_r†M̂_r` from `𝟙`, by composite
/// Simpson quadrature over `±n_sigma` record standard deviations (about the
/// outcome means `±1`) with `n_intervals` panels (rounded up to even).
pub fn povm_completeness_check(cfg: &MeasurementConfig, dt: f64, n_sigma: f64, n_intervals: usize) -> f64 {
    let sigma = cfg.record_std(dt);
    let (lo, hi) = (-1.0 - n_sigma * sigma, 1.0 + n_sigma * sigma);
    let n = n_intervals.max(2).next_multiple_of(2);
    let h = (hi - lo) / n as f64;
    let mut acc = Mat4::zeros();
    for k in 0..=n {
        let r = lo + k as f64 * h;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let m = kraus_operator(r, cfg, dt);
        acc += m.adjoint() * m * C64::from(w * h / 3.0 * record_weight(r, cfg, dt));
    }
    (acc - Mat4::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::measurement_dephasing_channel;
    use crate::quantum::{bell_decompose, BellState};
    use crate::testutil::{expm, random_state};
    use rand::Rng;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> MeasurementConfig {
        MeasurementConfig::new(1.0, 0.5).unwrap()
    }

    #[test]
    fn tau_definition() {
        let c = MeasurementConfig::new(3.0, 0.25).unwrap();
        assert_eq!(c.tau() * 2.0 * c.eta() * c.gamma(), 1.0);
        assert!(MeasurementConfig::new(-1.0, 0.5).is_err());
        assert!(MeasurementConfig::new(1.0, 0.0).is_err());
        assert!(MeasurementConfig::new(1.0, 1.1).is_err());
    }

    #[test]
    fn noiseless_records_are_parity_eigenvalues() {
        let c = cfg();
        assert_eq!(record_from_noise(&TwoQubitState::computational(0), &c, 0.001, 0.0), 1.0);
        assert_eq!(record_from_noise(&TwoQubitState::bell(BellState::PsiPlus), &c, 0.001, 0.0), 0.0);
        assert_eq!(record_from_noise(&TwoQubitState::computational(3), &c, 0.001, 0.0), -1.0);
    }

    #[test]
    fn record_mean_matches_expectation() {
        let (c, dt, n) = (cfg(), 0.001, 100_000);
        let state = TwoQubitState::plus_plus();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mean = (0..n).map(|_| sample_record(&state, &c, dt, &mut rng)).sum::<f64>() / n as f64;
        let expected = 0.0;
        assert!((mean - expected).abs() < 3.0 * c.record_std(dt) / (n as f64).sqrt());
        let s = TwoQubitState::from_matrix_unchecked(Mat4::from_diagonal(
            &[0.6, 0.1, 0.1, 0.2].map(C64::from).into(),
        ));
        let mean = (0..n).map(|_| sample_record(&s, &c, dt, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.4).abs() < 3.0 * c.record_std(dt) / (n as f64).sqrt());
    }

    #[test]
    fn record_distribution_on_ground_state() {
        // Kolmogorov–Smirnov against Norm(+1, τ/dt)
        let (c, dt, n) = (cfg(), 0.001, 20_000);
        let state = TwoQubitState::computational(0);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let sd = c.record_std(dt);
        let mut zs: Vec<f64> = (0..n).map(|_| (sample_record(&state, &c, dt, &mut rng) - 1.0) / sd).collect();
        zs.sort_by(f64::total_cmp);
        let d = zs
            .iter()
            .enumerate()
            .map(|(i, &z)| {
                let f = normal_cdf(z);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // p = 0.001 critical value ≈ 1.95/√n
        assert!(d < 1.95 / (n as f64).sqrt(), "KS statistic {d}");
        let var = zs.iter().map(|z| z * z).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
    }

    fn normal_cdf(z: f64) -> f64 {
        // Abramowitz–Stegun 7.1.26 erf approximation (|error| < 1.5e-7)
        let x = z.abs() / std::f64::consts::SQRT_2;
        let t = 1.0 / (1.0 + 0.327_591_1 * x);
        let poly = t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
        let erf = 1.0 - poly * (-x * x).exp();
        0.5 * (1.0 + erf.copysign(z))
    }

    #[test]
    fn kraus_forms_agree_with_exponential() {
        let (c, dt) = (cfg(), 0.001);
        for r in [-40.0, -3.0, -0.2, 0.0, 0.7, 5.0, 60.0] {
            let gen = (OPS.half_parity * C64::from(r) - OPS.half_parity_sq * C64::from(0.5)) * C64::from(c.strength(dt));
            let oracle = expm(&gen);
            let m = kraus_operator(r, &c, dt);
            assert!((m - oracle).norm() < 1e-12 * oracle.norm().max(1.0), "r = {r}");
            assert!((kraus_operator_bell_form(r, &c, dt) - m).norm() < 1e-12 * m.norm().max(1.0));
            let comm = m * OPS.half_parity - OPS.half_parity * m;
            assert!(comm.norm() < 1e-12);
        }
    }

    #[test]
    fn target_state_is_untouched() {
        let s = TwoQubitState::bell(BellState::PsiPlus);
        for r in [-1e6, -5.0, 0.0, 3.3, 1e6] {
            let out = bayesian_update(&s, r, &cfg(), 0.01).unwrap();
            assert!((out.matrix() - s.matrix()).norm() < 1e-15);
        }
    }

    #[test]
    fn large_record_drives_mixed_state_toward_ground() {
        let c = cfg();
        let dt = 0.01;
        let r = 3.0 / c.strength(dt);
        let out = bayesian_update(&TwoQubitState::maximally_mixed(), r, &c, dt).unwrap();
        let d = bell_decompose(&out);
        assert!(out.matrix()[(0, 0)].re > 0.99);
        assert!((d.population(BellState::PhiPlus) - d.population(BellState::PhiMinus)).abs() < 1e-12);
        assert!(d.element(BellState::PhiPlus, BellState::PhiMinus).re > 0.49);
    }

    #[test]
    fn extreme_records_stay_finite() {
        let c = cfg();
        let s = TwoQubitState::plus_plus();
        for r in [-1e12, 1e12, 1e300] {
            let out = bayesian_update(&s, r, &c, 0.001).unwrap();
            assert!(out.validate().is_ok(), "r = {r}");
        }
        assert!(bayesian_update(&s, f64::NAN, &c, 0.001).is_err());
    }

    #[test]
    fn povm_completeness() {
        assert!(povm_completeness_check(&cfg(), 0.001, 8.0, 4000) < 1e-8);
        let ideal = MeasurementConfig::new(1.0, 1.0).unwrap();
        assert!(povm_completeness_check(&ideal, 0.01, 8.0, 4000) < 1e-8);
    }

    #[test]
    fn odd_block_of_povm_is_identity_pointwise() {
        for r in [-10.0, 0.0, 2.5] {
            let m = kraus_operator(r, &cfg(), 0.001);
            assert_eq!(m[(1, 1)], C64::from(1.0));
            assert_eq!(m[(2, 2)], C64::from(1.0));
        }
    }

    #[test]
    fn odd_weight_is_a_martingale() {
        let (c, dt, steps, n) = (cfg(), 0.001, 8000, 1000);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut total = 0.0;
        let mut collapsed = 0;
        for _ in 0..n {
            let mut s = TwoQubitState::maximally_mixed();
            for _ in 0..steps {
                let r = sample_record(&s, &c, dt, &mut rng);
                s = bayesian_update(&s, r, &c, dt).unwrap();
            }
            let odd = s.matrix()[(1, 1)].re + s.matrix()[(2, 2)].re;
            total += odd;
            if !(0.05..=0.95).contains(&odd) {
                collapsed += 1;
            }
        }
        let mean = total / n as f64;
        // odd weight ∈ [0, 1]; its standard deviation is at most 1/2
        assert!((mean - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt(), "mean {mean}");
        assert!(collapsed > n / 2);
    }

    #[test]
    fn unraveling_reproduces_full_dephasing() {
        // Recorded backaction at ηΓ plus the unrecorded channel at (1−η)Γ
        // reproduce dephasing of the |00⟩,|11⟩ coherence at Γ.
        let (c, dt, n_traj) = (cfg(), 0.001, 4000);
        let residual = measurement_dephasing_channel(c.eta(), c.gamma(), dt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let t_final = 1.0;
        let steps = (t_final / dt) as usize;
        let mut mean = Mat4::zeros();
        for _ in 0..n_traj {
            let mut rho = *TwoQubitState::bell(BellState::PhiPlus).matrix();
            for _ in 0..steps {
                let r = record_from_noise(&TwoQubitState::from_matrix_unchecked(rho), &c, dt, rng.sample(StandardNormal));
                bayesian_update_in_place(&mut rho, r, c.strength(dt)).unwrap();
                residual.apply_in_place(&mut rho);
            }
            mean += rho;
        }
        mean /= C64::from(n_traj as f64);
        let coherence = 2.0 * mean[(0, 3)].re;
        let expected = (-c.gamma() * t_final).exp();
        assert!((coherence / expected - 1.0).abs() < 0.03, "{coherence} vs {expected}");
    }

    proptest! {
        #[test]
        fn update_preserves_state_invariants(seed in any::<u64>(), r in -50.0f64..50.0, gamma in 0.1f64..20.0, eta in 0.05f64..=1.0) {
            let c = MeasurementConfig::new(gamma, eta).unwrap();
            let s = random_state(&mut ChaCha8Rng::seed_from_u64(seed));
            let out = bayesian_update(&s, r, &c, 0.01).unwrap();
            prop_assert!(out.validate().is_ok());
            let m = kraus_operator(r, &c, 0.01);
            let direct = m * s.matrix() * m.adjoint();
            let direct = direct / direct.trace();
            prop_assert!((out.matrix() - direct).norm() < 1e-10);
        }
    }
}
