//! Noise calibration runs: `ω ↔ Γ₂` conversion, `Γ_eff(Δ)` tables and the
//! fluctuator spectrum.

use std::path::{Path, PathBuf};

use bellstab_core::calibration::{
    calibrate_conversion, effective_dephasing_table, ConversionLaw, NoiseKind, SweepOptions, TableOptions,
};
use bellstab_core::noise::{build_fluctuator_set, psd_estimate, FluctuatorBand, Psd};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, PsdRow};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionRow {
    pub omega_rad_per_us: f64,
    pub gamma2_per_us: f64,
    pub gamma2_stderr: f64,
    pub beta: f64,
    pub beta_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub omega_rad_per_us: f64,
    pub t_us: f64,
    pub coherence: f64,
    pub stderr: f64,
}

/// What a calibration run fitted, written as `calibration.toml`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub conversion: Vec<LawEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub large_delta: Vec<LawEntry>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psd_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawEntry {
    pub noise: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gamma2_per_us: Option<f64>,
    pub prefactor: f64,
    pub exponent: f64,
    pub reference: f64,
}

impl LawEntry {
    fn new(noise: NoiseKind, gamma2: Option<f64>, law: &ConversionLaw) -> Self {
        Self { noise: noise.as_str().into(), gamma2_per_us: gamma2, prefactor: law.prefactor, exponent: law.exponent, reference: law.reference }
    }
}

/// Ramsey sweep over `omegas`; writes `conversion_<kind>.csv` and
/// `ramsey_<kind>.csv`.
pub fn conversion(
    dir: &Path,
    noise: NoiseKind,
    omegas: &[f64],
    opts: &SweepOptions,
    summary: &mut CalibrationSummary,
) -> Result<Vec<PathBuf>, CliError> {
    let cal = calibrate_conversion(noise, omegas, opts)?;
    let rows: Vec<ConversionRow> = cal
        .points
        .iter()
        .map(|p| ConversionRow {
            omega_rad_per_us: p.omega,
            gamma2_per_us: p.fit.gamma2,
            gamma2_stderr: p.fit.gamma2_stderr(),
            beta: p.fit.beta,
            beta_stderr: p.fit.beta_stderr(),
        })
        .collect();
    let mut decay = Vec::new();
    for (p, c) in cal.points.iter().zip(&cal.curves) {
        for i in 0..c.times.len() {
            decay.push(DecayRow { omega_rad_per_us: p.omega, t_us: c.times[i], coherence: c.mean[i], stderr: c.stderr[i] });
        }
    }
    let conv = dir.join(format!("conversion_{}.csv", noise.as_str()));
    let ramsey = dir.join(format!("ramsey_{}.csv", noise.as_str()));
    artifacts::write_rows(&conv, &rows)?;
    artifacts::write_rows(&ramsey, &decay)?;
    eprintln!("  {} conversion: Γ₂ ∝ ω^{:.3}", noise.as_str(), cal.law.exponent);
    summary.conversion.push(LawEntry::new(noise, None, &cal.law));
    Ok(vec![conv, ramsey])
}

/// `Γ_eff` over `deltas × gamma2s`; writes `dephasing_<kind>.csv` and fits
/// the large-`Δ` power law per `Γ₂` where at least two points have `Δ ≥ 4Γ₂`.
pub fn dephasing(
    dir: &Path,
    noise: NoiseKind,
    deltas: &[f64],
    gamma2s: &[f64],
    opts: &TableOptions,
    summary: &mut CalibrationSummary,
) -> Result<Vec<PathBuf>, CliError> {
    let table = effective_dephasing_table(deltas, gamma2s, noise, opts)?;
    let path = dir.join(format!("dephasing_{}.csv", noise.as_str()));
    let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    table.write_csv(file)?;
    for &g2 in gamma2s {
        if let Ok(law) = table.large_delta_law(noise, g2, 4.0) {
            eprintln!("  {} Γ₂ = {g2}: Γ_eff ∝ Δ^{:.3}", noise.as_str(), law.exponent);
            summary.large_delta.push(LawEntry::new(noise, Some(g2), &law));
        }
    }
    Ok(vec![path])
}

/// Averaged periodogram of `realizations` fluctuator sums; writes `psd.csv`.
pub fn spectrum(
    dir: &Path,
    band: &FluctuatorBand,
    realizations: usize,
    seed: u64,
    summary: &mut CalibrationSummary,
) -> Result<Vec<PathBuf>, CliError> {
    let (n, dt) = (1usize << 15, 0.002);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut estimates = Vec::with_capacity(realizations);
    for _ in 0..realizations.max(1) {
        let set = build_fluctuator_set(band, n as f64 * dt, &mut rng)?;
        estimates.push(psd_estimate(&set.sample_grid(dt, n), dt)?);
    }
    let psd = Psd::average(&estimates)?;
    let slope = psd.loglog_slope(0.1, 25.0)?;
    eprintln!("  PSD slope over 0.1–25 MHz: {slope:.3}");
    summary.psd_slope = Some(slope);
    let rows: Vec<PsdRow> = psd.freqs_mhz.iter().zip(&psd.power).map(|(&f, &p)| PsdRow { f_mhz: f, power: p }).collect();
    let path = dir.join(artifacts::PSD);
    artifacts::write_rows(&path, &rows)?;
    Ok(vec![path])
}

pub fn write_summary(dir: &Path, summary: &CalibrationSummary) -> Result<PathBuf, CliError> {
    let path = dir.join("calibration.toml");
    let text = toml::to_string(summary).map_err(|e| CliError::Runtime(format!("serializing calibration summary: {e}")))?;
    artifacts::write_text(&path, &text)?;
    Ok(path)
}
