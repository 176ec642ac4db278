//! Classical frequency-noise realizations and ensemble-average decoherence maps.

mod fluctuator;
mod lindblad;
pub mod psd;

pub use fluctuator::{build_fluctuator_set, FluctuatorBand, FluctuatorCursor, FluctuatorSet};
pub use lindblad::{apply_lindblad, measurement_dephasing_channel, ChannelBuilder, Jump, JumpOperator, LindbladChannel};
pub use psd::{psd_estimate, Psd};

use rand::Rng;
use rand_distr::StandardNormal;

/// Piecewise-constant Gaussian frequency noise, `χ(t_ℓ) ~ Norm(0, τ/dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhiteNoiseProcess {
    std_dev: f64,
}

impl WhiteNoiseProcess {
    pub fn new(tau: f64, dt: f64) -> Self {
        Self { std_dev: (tau / dt).sqrt() }
    }

    /// `τ = dt`: unit-variance samples.
    pub fn unit() -> Self {
        Self { std_dev: 1.0 }
    }

    pub fn variance(&self) -> f64 {
        self.std_dev * self.std_dev
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.std_dev * z
    }

    pub fn samples<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn white_noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = WhiteNoiseProcess::new(0.004, 0.001);
        let n = 200_000;
        let xs = w.samples(n, &mut rng);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // standard errors: σ/√n for the mean, σ²√(2/n) for the variance
        assert!(mean.abs() < 3.0 * 2.0 / (n as f64).sqrt());
        assert!((var - 4.0).abs() < 3.0 * 4.0 * (2.0 / n as f64).sqrt());
        assert_eq!(WhiteNoiseProcess::unit().variance(), 1.0);
    }
}
