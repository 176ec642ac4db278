use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NoiseError;

/// Log-uniform band of telegraph switching rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuatorBand {
    pub count: usize,
    pub f_min_mhz: f64,
    pub f_max_mhz: f64,
}

impl Default for FluctuatorBand {
    /// 20 fluctuators between 5 kHz and 50 MHz.
    fn default() -> Self {
        Self { count: 20, f_min_mhz: 0.005, f_max_mhz: 50.0 }
    }
}

impl FluctuatorBand {
    pub fn validate(&self) -> Result<(), NoiseError> {
        if self.count < 2 {
            return Err(NoiseError::TooFewFluctuators(self.count));
        }
        if !(self.f_min_mhz > 0.0 && self.f_min_mhz < self.f_max_mhz && self.f_max_mhz.is_finite()) {
            return Err(NoiseError::InvalidBand { f_min: self.f_min_mhz, f_max: self.f_max_mhz });
        }
        Ok(())
    }

    /// Switching rates `γ_i = γ₁(γ_N/γ₁)^{(i−1)/(N−1)}` in rad/μs. The
    /// endpoints are set exactly.
    pub fn rates(&self) -> Vec<f64> {
        let (g1, gn) = (TAU * self.f_min_mhz, TAU * self.f_max_mhz);
        let n = self.count;
        let ratio = gn / g1;
        (0..n)
            .map(|i| match i {
                0 => g1,
                _ if i == n - 1 => gn,
                _ => g1 * ratio.powf(i as f64 / (n - 1) as f64),
            })
            .collect()
    }

    /// `γ_geom = √(γ₁γ_N)` in rad/μs.
    pub fn geometric_mean_rate(&self) -> f64 {
        TAU * (self.f_min_mhz * self.f_max_mhz).sqrt()
    }
}

/// One realization of a bank of telegraph fluctuators over `[0, t_final]`.
///
/// `χ(t) = (1/N) Σ s_i(t)` is right-continuous: a switch at `T` applies for
/// `t ≥ T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuatorSet {
    rates: Vec<f64>,
    switch_times: Vec<Vec<f64>>,
    initial_signs: Vec<i8>,
    t_final: f64,
    // merged view of all switches
    event_times: Vec<f64>,
    // values[k] holds χ on [event_times[k-1], event_times[k])
    values: Vec<f64>,
    // ∫₀^{event_times[k]} χ
    integrals: Vec<f64>,
}

/// Samples a realization: each fluctuator's switch times are cumulative
/// `Exp(γ_i)` durations drawn by inverse CDF until they pass `t_final`, and
/// each initial sign is ±1 with equal probability.
pub fn build_fluctuator_set<R: Rng + ?Sized>(
    band: &FluctuatorBand,
    t_final: f64,
    rng: &mut R,
) -> Result<FluctuatorSet, NoiseError> {
    band.validate()?;
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(NoiseError::InvalidDuration(t_final));
    }
    let rates = band.rates();
    let mut switch_times = Vec::with_capacity(rates.len());
    let mut initial_signs = Vec::with_capacity(rates.len());
    for &gamma in &rates {
        initial_signs.push(if rng.random::<bool>() { 1 } else { -1 });
        let mut times = Vec::with_capacity((gamma * t_final * 1.2) as usize + 2);
        let mut t = 0.0;
        while t <= t_final {
            // 1 − u ∈ (0, 1], so the duration is finite and (almost surely) > 0
            let u: f64 = rng.random();
            let duration = -(1.0 - u).ln() / gamma;
            if duration <= 0.0 {
                continue;
            }
            t += duration;
            times.push(t);
        }
        switch_times.push(times);
    }
    Ok(FluctuatorSet::from_parts(rates, switch_times, initial_signs, t_final))
}

impl FluctuatorSet {
    /// Builds a set from explicit switch lists (sorted, strictly positive).
    pub fn from_parts(rates: Vec<f64>, switch_times: Vec<Vec<f64>>, initial_signs: Vec<i8>, t_final: f64) -> Self {
        let n = initial_signs.len() as f64;
        let mut events: Vec<(f64, usize)> = switch_times
            .iter()
            .enumerate()
            .flat_map(|(i, ts)| ts.iter().map(move |&t| (t, i)))
            .collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut signs = initial_signs.clone();
        let mut sum: i64 = signs.iter().map(|&s| s as i64).sum();
        let mut values = Vec::with_capacity(events.len() + 1);
        let mut integrals = Vec::with_capacity(events.len());
        let mut event_times = Vec::with_capacity(events.len());
        values.push(sum as f64 / n);
        let (mut last_t, mut acc) = (0.0, 0.0);
        for (t, i) in events {
            acc += (sum as f64 / n) * (t - last_t);
            integrals.push(acc);
            event_times.push(t);
            last_t = t;
            sum -= 2 * signs[i] as i64;
            signs[i] = -signs[i];
            values.push(sum as f64 / n);
        }
        Self { rates, switch_times, initial_signs, t_final, event_times, values, integrals }
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn switch_times(&self) -> &[Vec<f64>] {
        &self.switch_times
    }

    pub fn initial_signs(&self) -> &[i8] {
        &self.initial_signs
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Merged switch times of all fluctuators, sorted.
    pub fn breakpoints(&self) -> &[f64] {
        &self.event_times
    }

    /// `levels()[k]` is `χ` on `[breakpoints[k-1], breakpoints[k])`, with
    /// `levels()[0]` the initial value. One longer than `breakpoints()`.
    pub fn levels(&self) -> &[f64] {
        &self.values
    }

    /// Number of switches of fluctuator `i` inside `[0, t]`.
    pub fn switch_count(&self, i: usize, t: f64) -> usize {
        self.switch_times[i].partition_point(|&s| s <= t)
    }

    fn check_time(&self, t: f64) -> Result<(), NoiseError> {
        if !(0.0..=self.t_final).contains(&t) {
            return Err(NoiseError::TimeOutOfRange { t, t_final: self.t_final });
        }
        Ok(())
    }

    /// `χ(t)`.
    pub fn value(&self, t: f64) -> Result<f64, NoiseError> {
        self.check_time(t)?;
        Ok(self.values[self.event_times.partition_point(|&s| s <= t)])
    }

    /// `∫₀ᵗ χ(s) ds`.
    pub fn integral(&self, t: f64) -> Result<f64, NoiseError> {
        self.check_time(t)?;
        Ok(self.integral_at(self.event_times.partition_point(|&s| s <= t), t))
    }

    #[inline]
    fn integral_at(&self, idx: usize, t: f64) -> f64 {
        if idx == 0 {
            self.values[0] * t
        } else {
            self.integrals[idx - 1] + self.values[idx] * (t - self.event_times[idx - 1])
        }
    }

    /// `χ` sampled on `t = k·dt`, `k = 0..n`.
    pub fn sample_grid(&self, dt: f64, n: usize) -> Vec<f64> {
        let mut cursor = self.cursor();
        (0..n).map(|k| cursor.value(k as f64 * dt)).collect()
    }

    pub fn cursor(&self) -> FluctuatorCursor<'_> {
        FluctuatorCursor { set: self, idx: 0 }
    }
}

/// Sequential reader over a [`FluctuatorSet`]. Query times must be
/// nondecreasing; each query is amortized O(1).
#[derive(Debug, Clone)]
pub struct FluctuatorCursor<'a> {
    set: &'a FluctuatorSet,
    idx: usize,
}

impl FluctuatorCursor<'_> {
    #[inline]
    fn advance(&mut self, t: f64) {
        let times = &self.set.event_times;
        while self.idx < times.len() && times[self.idx] <= t {
            self.idx += 1;
        }
    }

    #[inline]
    pub fn value(&mut self, t: f64) -> f64 {
        self.advance(t);
        self.set.values[self.idx]
    }

    #[inline]
    pub fn integral(&mut self, t: f64) -> f64 {
        self.advance(t);
        self.set.integral_at(self.idx, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_band_rates() {
        let band = FluctuatorBand::default();
        let rates = band.rates();
        assert_eq!(rates.len(), 20);
        assert_eq!(rates[0], TAU * 0.005);
        assert_eq!(rates[19], TAU * 50.0);
        let geom = band.geometric_mean_rate();
        assert!((geom - TAU * 0.5).abs() < 1e-12);
        let log_mean = rates.iter().map(|r| r.ln()).sum::<f64>() / 20.0;
        assert!((log_mean.exp() - geom).abs() < 1e-10);
        for i in 0..20 {
            let expected = rates[0] * (rates[19] / rates[0]).powf(i as f64 / 19.0);
            assert!((rates[i] - expected).abs() <= 1e-12 * expected);
        }
    }

    #[test]
    fn two_fluctuators_are_the_endpoints() {
        let band = FluctuatorBand { count: 2, f_min_mhz: 0.1, f_max_mhz: 3.0 };
        assert_eq!(band.rates(), vec![TAU * 0.1, TAU * 3.0]);
    }

    #[test]
    fn rejects_bad_bands() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = FluctuatorBand { count: 1, ..Default::default() };
        assert_eq!(build_fluctuator_set(&one, 1.0, &mut rng), Err(NoiseError::TooFewFluctuators(1)));
        let inverted = FluctuatorBand { count: 5, f_min_mhz: 2.0, f_max_mhz: 1.0 };
        assert!(build_fluctuator_set(&inverted, 1.0, &mut rng).is_err());
        assert!(build_fluctuator_set(&FluctuatorBand::default(), -1.0, &mut rng).is_err());
    }

    #[test]
    fn seeded_sets_are_identical() {
        let band = FluctuatorBand::default();
        let a = build_fluctuator_set(&band, 20.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = build_fluctuator_set(&band, 20.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn switch_lists_cover_window() {
        let set = build_fluctuator_set(&FluctuatorBand::default(), 5.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for times in set.switch_times() {
            assert!(*times.last().unwrap() > 5.0);
            let mut prev = 0.0;
            for &t in times {
                assert!(t > prev);
                prev = t;
            }
        }
        for k in 0..=500 {
            let v = set.value(k as f64 * 0.01).unwrap();
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn value_at_zero_is_mean_initial_sign() {
        let set = build_fluctuator_set(&FluctuatorBand::default(), 1.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mean = set.initial_signs().iter().map(|&s| s as f64).sum::<f64>() / 20.0;
        // the fastest fluctuators may already have switched by t = 1e-12, so use 0 exactly
        assert_eq!(set.value(0.0).unwrap(), mean);
    }

    #[test]
    fn single_switch_flips_sign() {
        let set = FluctuatorSet::from_parts(vec![1.0, 1.0], vec![vec![2.0, 9.0], vec![9.5]], vec![1, 1], 5.0);
        assert_eq!(set.value(1.999).unwrap(), 1.0);
        assert_eq!(set.value(2.0).unwrap(), 0.0);
        assert_eq!(set.value(4.0).unwrap(), 0.0);
        assert!((set.integral(3.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(set.value(5.5).is_err());
        assert!(set.value(-0.1).is_err());
        let mut c = set.cursor();
        assert_eq!(c.value(1.0), 1.0);
        assert_eq!(c.value(3.0), 0.0);
        assert!((c.integral(4.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cursor_matches_random_access() {
        let set = build_fluctuator_set(&FluctuatorBand::default(), 3.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut c = set.cursor();
        for k in 0..3000 {
            let t = k as f64 * 0.001;
            assert_eq!(c.value(t), set.value(t).unwrap());
            assert!((c.integral(t) - set.integral(t).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn long_run_time_average_vanishes() {
        // Ensemble of time averages over seeds; the mean is zero within 3σ.
        let band = FluctuatorBand::default();
        let (t_final, n_seeds) = (200.0, 300);
        let avgs: Vec<f64> = (0..n_seeds)
            .map(|s| {
                let set = build_fluctuator_set(&band, t_final, &mut ChaCha8Rng::seed_from_u64(1000 + s)).unwrap();
                set.integral(t_final).unwrap() / t_final
            })
            .collect();
        let mean = avgs.iter().sum::<f64>() / n_seeds as f64;
        let var = avgs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n_seeds - 1) as f64;
        assert!(mean.abs() < 3.0 * (var / n_seeds as f64).sqrt(), "mean {mean}");
    }
}
