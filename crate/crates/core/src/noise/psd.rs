//! One-sided periodogram estimates of frequency-noise spectra.

use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::NoiseError;

pub const MIN_SAMPLES: usize = 1 << 14;

/// A power spectral density on the nonnegative frequency grid `k/(N·dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    /// MHz when `dt` is in μs.
    pub freqs_mhz: Vec<f64>,
    pub power: Vec<f64>,
}

/// Raw one-sided periodogram `P_k = (2dt/N)|X_k|²` (DC and Nyquist bins are
/// not doubled), so that `Σ_k P_k Δf` equals the sample mean square.
pub fn psd_estimate(samples: &[f64], dt: f64) -> Result<Psd, NoiseError> {
    if samples.len() < MIN_SAMPLES {
        return Err(NoiseError::TooFewSamples { needed: MIN_SAMPLES, got: samples.len() });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(NoiseError::InvalidDuration(dt));
    }
    let n = samples.len();
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let df = 1.0 / (n as f64 * dt);
    let half = n / 2;
    let mut freqs_mhz = Vec::with_capacity(half + 1);
    let mut power = Vec::with_capacity(half + 1);
    for (k, x) in buf.iter().take(half + 1).enumerate() {
        let edge = k == 0 || (n % 2 == 0 && k == half);
        let scale = if edge { dt / n as f64 } else { 2.0 * dt / n as f64 };
        freqs_mhz.push(k as f64 * df);
        power.push(scale * x.norm_sqr());
    }
    Ok(Psd { freqs_mhz, power })
}

impl Psd {
    pub fn resolution_mhz(&self) -> f64 {
        self.freqs_mhz.get(1).copied().unwrap_or(0.0)
    }

    /// Centered moving average over `window_mhz` (truncated at the edges).
    pub fn smoothed(&self, window_mhz: f64) -> Psd {
        let df = self.resolution_mhz();
        let width = if df > 0.0 { ((window_mhz / df).round() as usize).max(1) } else { 1 };
        let half = width / 2;
        let n = self.power.len();
        let mut prefix = vec![0.0; n + 1];
        for (i, p) in self.power.iter().enumerate() {
            prefix[i + 1] = prefix[i] + p;
        }
        let power = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + width - half).min(n);
                (prefix[hi] - prefix[lo]) / (hi - lo) as f64
            })
            .collect();
        Psd { freqs_mhz: self.freqs_mhz.clone(), power }
    }

    /// Least-squares slope of `log P` against `log f` over `[f_lo, f_hi]`.
    /// The periodogram is first averaged into logarithmic bins (10 per
    /// decade) so every decade carries equal weight.
    pub fn loglog_slope(&self, f_lo_mhz: f64, f_hi_mhz: f64) -> Result<f64, NoiseError> {
        if !(f_lo_mhz > 0.0 && f_hi_mhz > f_lo_mhz) {
            return Err(NoiseError::InvalidParameter(format!("bad slope band [{f_lo_mhz}, {f_hi_mhz}]")));
        }
        let per_decade = 10.0;
        let n_bins = ((f_hi_mhz / f_lo_mhz).log10() * per_decade).ceil() as usize;
        let mut sums = vec![(0.0, 0.0, 0usize); n_bins];
        for (&f, &p) in self.freqs_mhz.iter().zip(&self.power) {
            if f < f_lo_mhz || f > f_hi_mhz || p <= 0.0 {
                continue;
            }
            let b = (((f / f_lo_mhz).log10() * per_decade) as usize).min(n_bins - 1);
            sums[b].0 += f.ln();
            sums[b].1 += p;
            sums[b].2 += 1;
        }
        let points: Vec<(f64, f64)> = sums
            .iter()
            .filter(|s| s.2 > 0)
            .map(|&(lf, p, c)| (lf / c as f64, (p / c as f64).ln()))
            .collect();
        if points.len() < 3 {
            return Err(NoiseError::InvalidParameter("slope band holds fewer than 3 populated bins".into()));
        }
        Ok(linear_fit(&points).0)
    }

    /// Bin-wise mean of estimates on the same grid.
    pub fn average(estimates: &[Psd]) -> Result<Psd, NoiseError> {
        let first = estimates.first().ok_or_else(|| NoiseError::InvalidParameter("no estimates to average".into()))?;
        if estimates.iter().any(|e| e.freqs_mhz.len() != first.freqs_mhz.len()) {
            return Err(NoiseError::InvalidParameter("estimates are on different grids".into()));
        }
        let m = estimates.len() as f64;
        let power = (0..first.power.len())
            .map(|k| estimates.iter().map(|e| e.power[k]).sum::<f64>() / m)
            .collect();
        Ok(Psd { freqs_mhz: first.freqs_mhz.clone(), power })
    }

    pub fn peak_frequency(&self) -> f64 {
        let (k, _) = self
            .power
            .iter()
            .enumerate()
            .skip(1)
            .fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best });
        self.freqs_mhz[k]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "frequency_MHz,power")?;
        for (f, p) in self.freqs_mhz.iter().zip(&self.power) {
            writeln!(out, "{f},{p}")?;
        }
        Ok(())
    }
}

/// Ordinary least squares `y = a·x + b`, returns `(a, b)`.
pub(crate) fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let a = sxy / sxx;
    (a, my - a * mx)
}
