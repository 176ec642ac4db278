//! Run-directory files and the CSV tables presets write.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use bellstab_core::config::manifest;
use bellstab_core::engine::{EnsembleResult, SimulationConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST: &str = "manifest.toml";
pub const FIDELITY: &str = "fidelity.csv";
pub const TRACES_DIR: &str = "traces";
pub const CURVES: &str = "curves.csv";
pub const SWEEP: &str = "sweep.csv";
pub const SUMMARY: &str = "summary.csv";
pub const TRAJECTORIES: &str = "trajectories.csv";
pub const PSD: &str = "psd.csv";

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// Writes `manifest.toml`, `fidelity.csv` and any recorded traces into `dir`.
pub fn write_run(dir: &Path, cfg: &SimulationConfig, result: &EnsembleResult) -> Result<(), CliError> {
    create_dir(dir)?;
    write_text(&dir.join(MANIFEST), &manifest(cfg)?)?;
    let path = dir.join(FIDELITY);
    result.write_fidelity_csv(create(&path)?).map_err(|e| CliError::io(&path, e))?;
    let traced: Vec<_> = result.trajectories.iter().filter(|t| t.traces.is_some()).collect();
    if !traced.is_empty() {
        let tdir = dir.join(TRACES_DIR);
        create_dir(&tdir)?;
        for t in traced {
            let path = tdir.join(format!("traj_{:05}.csv", t.index));
            t.traces.as_ref().expect("filtered").write_csv(create(&path)?).map_err(|e| CliError::io(&path, e))?;
        }
    }
    Ok(())
}

/// One point of an ensemble curve in a multi-curve table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub panel: String,
    pub label: String,
    pub t_us: f64,
    #[serde(rename = "F_sys")]
    pub f_sys: f64,
    #[serde(rename = "F_est")]
    pub f_est: f64,
    pub stderr: f64,
}

/// One sweep point reduced to scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub panel: String,
    /// Labels of the axes that are neither `x` nor `y`.
    pub group: String,
    pub x_name: String,
    pub x: f64,
    pub y_name: String,
    pub y: f64,
    #[serde(rename = "F")]
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub panel: String,
    pub label: String,
    #[serde(rename = "F_final")]
    pub f_final: f64,
    /// Mean `F_sys` over the last third of the run.
    #[serde(rename = "F_tail")]
    pub f_tail: f64,
    pub stderr_final: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub dir: String,
}

/// Per-trajectory fidelity in long form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub panel: String,
    pub traj: usize,
    pub t_us: f64,
    #[serde(rename = "F_sys")]
    pub f_sys: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdRow {
    pub f_mhz: f64,
    pub power: f64,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| CliError::csv(path, e))
}

/// `t_us,F_sys,F_est,stderr` as written by a run.
pub fn read_fidelity(path: &Path) -> Result<Vec<CurveRow>, CliError> {
    #[derive(Deserialize)]
    struct Row {
        t_us: f64,
        #[serde(rename = "F_sys")]
        f_sys: f64,
        #[serde(rename = "F_est")]
        f_est: f64,
        stderr: f64,
    }
    Ok(read_rows::<Row>(path)?
        .into_iter()
        .map(|r| CurveRow { panel: String::new(), label: "F_sys".into(), t_us: r.t_us, f_sys: r.f_sys, f_est: r.f_est, stderr: r.stderr })
        .collect())
}

/// Curve rows for one finished ensemble.
pub fn curve_rows(panel: &str, label: &str, result: &EnsembleResult) -> Vec<CurveRow> {
    (0..result.times.len())
        .map(|i| CurveRow {
            panel: panel.into(),
            label: label.into(),
            t_us: result.times[i],
            f_sys: result.fidelity_sys[i],
            f_est: result.fidelity_est[i],
            stderr: result.stderr[i],
        })
        .collect()
}

/// A directory name made only of portable characters.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_' | '=') { c } else { '_' })
        .collect()
}

pub fn relative(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}
