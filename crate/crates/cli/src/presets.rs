//! Preset experiments at desk scale.
//!
//! A preset is a list of panels. Each panel is a base configuration plus
//! sweep axes whose values override keys of the configuration file by path
//! (`measurement.gamma_per_us`, `controller.strategy`, ...); every
//! combination of axis values is one ensemble run. The `calibration` preset
//! is the exception and runs the noise calibration suite instead.
//!
//! Scaling by `s ∈ (0, 1]` sets `n_traj = round(s·n)` and
//! `t_f = min(t, round(5/3·s·t))`, so `s = 0.2` turns the standard
//! 1000 × 150 μs into 200 × 50 μs. Fixed axis values do not scale.
//!
//! All points of a preset share one master seed, so curves within a panel
//! differ only by their parameters (common random numbers).

use std::path::{Path, PathBuf};
use std::time::Instant;

use bellstab_core::calibration::{NoiseKind, SweepOptions, TableOptions};
use bellstab_core::config::FileConfig;
use bellstab_core::engine::{run_ensemble, RunOptions};
use bellstab_core::noise::FluctuatorBand;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::artifacts::{self, CurveRow, SummaryRow, SweepRow, TrajectoryRow};
use crate::calibrate::{self, CalibrationSummary};
use crate::plot;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct AxisValue {
    pub label: String,
    /// Numeric coordinate for heatmap axes.
    pub coord: Option<f64>,
    /// `(path, value)`; `None` removes the key.
    pub overrides: Vec<(String, Option<Value>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub name: String,
    pub values: Vec<AxisValue>,
}

impl SweepAxis {
    /// One key stepped over numbers, labelled `name=value`.
    pub fn numeric(name: &str, path: &str, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            values: values
                .iter()
                .map(|&v| AxisValue {
                    label: format!("{name}={v}"),
                    coord: Some(v),
                    overrides: vec![(path.into(), Some(Value::Float(v)))],
                })
                .collect(),
        }
    }

    pub fn variants(name: &str, values: Vec<AxisValue>) -> Self {
        Self { name: name.into(), values }
    }
}

fn variant(label: &str, overrides: &[(&str, Option<Value>)]) -> AxisValue {
    AxisValue {
        label: label.into(),
        coord: None,
        overrides: overrides.iter().map(|(p, v)| (p.to_string(), v.clone())).collect(),
    }
}

fn s(v: &str) -> Option<Value> {
    Some(Value::String(v.into()))
}

fn f(v: f64) -> Option<Value> {
    Some(Value::Float(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// `F(t_f)`
    Final,
    /// Mean of `F` over `[2t_f/3, t_f]`.
    TailAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputSpec {
    /// Fidelity curves, one per point.
    Curves {
        /// Also store every trajectory's fidelity series.
        per_trajectory: bool,
        /// Per-cycle traces for this many trajectories of each point.
        traces: usize,
    },
    /// One scalar per point on an `x × y` grid; other axes split the grid
    /// into groups.
    Sweep { x: usize, y: usize, metric: Metric },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostProcess {
    /// Delayed vs best attenuated vs forward, per `(Γ, τ_d)`.
    EstimationComparison,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub name: String,
    pub title: String,
    pub base: FileConfig,
    pub axes: Vec<SweepAxis>,
    pub output: OutputSpec,
    pub post: Option<PostProcess>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PresetKind {
    Ensemble(Vec<Panel>),
    Calibration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: &'static str,
    pub description: &'static str,
    pub kind: PresetKind,
}

/// One grid point of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub labels: Vec<String>,
    pub coords: Vec<Option<f64>>,
    pub config: FileConfig,
}

impl Point {
    pub fn label(&self) -> String {
        self.labels.join(" ")
    }
}

/// Sets or removes `path` (`section.key`) in a configuration file.
pub fn apply_overrides(base: &FileConfig, overrides: &[(String, Option<Value>)]) -> Result<FileConfig, CliError> {
    let mut doc = Value::try_from(base).map_err(|e| CliError::Runtime(format!("serializing base config: {e}")))?;
    for (path, value) in overrides {
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| CliError::Usage(format!("sweep path `{path}` is not of the form section.key")))?;
        let table = doc.as_table_mut().expect("config serializes to a table");
        let sec = table
            .entry(section.to_string())
            .or_insert_with(|| Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("sweep path `{path}`: `{section}` is not a section")))?;
        match value {
            Some(v) => {
                sec.insert(key.to_string(), v.clone());
            }
            None => {
                sec.remove(key);
            }
        }
    }
    doc.try_into::<FileConfig>()
        .map_err(|e| CliError::Usage(format!("sweep overrides do not form a valid config: {}", e.message())))
}

impl Panel {
    /// Checks the axes before anything runs: nonempty value lists, every
    /// override naming an existing key, numeric coordinates on heatmap axes.
    pub fn validate(&self) -> Result<(), CliError> {
        for axis in &self.axes {
            if axis.values.is_empty() {
                return Err(CliError::Usage(format!("panel {}: axis `{}` has no values", self.name, axis.name)));
            }
            for v in &axis.values {
                apply_overrides(&self.base, &v.overrides)?;
            }
        }
        if let OutputSpec::Sweep { x, y, .. } = self.output {
            for i in [x, y] {
                let axis = self
                    .axes
                    .get(i)
                    .ok_or_else(|| CliError::Usage(format!("panel {}: sweep axis {i} does not exist", self.name)))?;
                if axis.values.iter().any(|v| v.coord.is_none()) {
                    return Err(CliError::Usage(format!("panel {}: axis `{}` is not numeric", self.name, axis.name)));
                }
            }
        }
        Ok(())
    }

    /// Cartesian product of the axes, first axis outermost.
    pub fn points(&self) -> Result<Vec<Point>, CliError> {
        let mut points = vec![(Vec::new(), Vec::new(), Vec::new())];
        for axis in &self.axes {
            let mut next = Vec::with_capacity(points.len() * axis.values.len());
            for (labels, coords, overrides) in &points {
                for v in &axis.values {
                    let mut l: Vec<String> = labels.clone();
                    let mut c: Vec<Option<f64>> = coords.clone();
                    let mut o: Vec<(String, Option<Value>)> = overrides.clone();
                    l.push(v.label.clone());
                    c.push(v.coord);
                    o.extend(v.overrides.iter().cloned());
                    next.push((l, c, o));
                }
            }
            points = next;
        }
        points
            .into_iter()
            .map(|(labels, coords, overrides)| Ok(Point { labels, coords, config: apply_overrides(&self.base, &overrides)? }))
            .collect()
    }
}

fn base(text: &str) -> FileConfig {
    FileConfig::from_toml(text).expect("preset base configs are valid")
}

/// 1000 trajectories over 150 μs, checkpoints every 1 μs.
fn standard(environment: &str, strategy: &str, extra: &str) -> FileConfig {
    base(&format!(
        "[simulation]\nt_final_us = 150.0\nn_traj = 1000\ncheckpoint_every = 100\n\
         [noise]\nenvironment = \"{environment}\"\n\
         [controller]\nstrategy = \"{strategy}\"\nestimation = \"forward\"\n{extra}"
    ))
}

fn strategies() -> SweepAxis {
    SweepAxis::variants(
        "strategy",
        vec![
            variant("off", &[("controller.strategy", s("no_decoupling"))]),
            variant("constant", &[("controller.strategy", s("constant_dd")), ("controller.delta_dd_mhz", f(25.0))]),
            variant("optimal", &[("controller.strategy", s("optimal_dd"))]),
        ],
    )
}

fn curves(name: &str, title: &str, base: FileConfig, axes: Vec<SweepAxis>) -> Panel {
    Panel {
        name: name.into(),
        title: title.into(),
        base,
        axes,
        output: OutputSpec::Curves { per_trajectory: false, traces: 0 },
        post: None,
    }
}

fn sweep(name: &str, title: &str, base: FileConfig, axes: Vec<SweepAxis>) -> Panel {
    Panel {
        name: name.into(),
        title: title.into(),
        base,
        axes,
        output: OutputSpec::Sweep { x: 0, y: 1, metric: Metric::Final },
        post: None,
    }
}

const ENVIRONMENTS: [(&str, &str, &str); 3] = [
    ("fluctuators", "1/f fluctuators", "constant_dd"),
    ("fluctuators_plus_t1", "fluctuators and T1", "optimal_dd"),
    ("white", "white noise", "optimal_dd"),
];

/// Base for an environment's best strategy.
fn best(environment: &str, strategy: &str) -> FileConfig {
    let extra = if strategy == "constant_dd" { "delta_dd_mhz = 25.0\n" } else { "" };
    standard(environment, strategy, extra)
}

fn nonideal() -> Vec<SweepAxis> {
    vec![
        SweepAxis::numeric("eta", "measurement.eta", &[0.5, 1.0]),
        SweepAxis::numeric("tau_d", "controller.loop_delay_us", &[0.1, 0.5, 1.0]),
    ]
}

const GAMMA_GRID: [f64; 5] = [0.5, 1.0, 2.0, 5.76, 10.0];
const GAMMA2_GRID: [f64; 4] = [0.01, 0.02, 0.05, 0.1];
const DELAY_GRID: [f64; 5] = [0.1, 0.52, 1.0, 2.0, 5.0];

pub fn catalog() -> Vec<ExperimentPreset> {
    let mut out = Vec::new();
    for (letter, (env, title, _)) in ["a", "b", "c"].iter().zip(ENVIRONMENTS) {
        out.push(ExperimentPreset {
            name: match *letter {
                "a" => "fig2a",
                "b" => "fig2b",
                _ => "fig2c",
            },
            description: "three decoupling strategies (off, constant 25 MHz, state-dependent)",
            kind: PresetKind::Ensemble(vec![curves(
                letter,
                &format!("{title}: decoupling strategies"),
                standard(env, "no_decoupling", ""),
                vec![strategies()],
            )]),
        });
    }

    out.push(ExperimentPreset {
        name: "fig2def",
        description: "efficiency and loop-delay variations with each environment's best strategy",
        kind: PresetKind::Ensemble(
            ["d", "e", "f"]
                .iter()
                .zip(ENVIRONMENTS)
                .map(|(letter, (env, title, strategy))| {
                    curves(letter, &format!("{title}: η and τ_d"), best(env, strategy), nonideal())
                })
                .collect(),
        ),
    });

    out.push(ExperimentPreset {
        name: "fig3a",
        description: "fluctuators, constant decoupling: Δ₀/2π × Γ₂ grid",
        kind: PresetKind::Ensemble(vec![sweep(
            "a",
            "fluctuators: F(t_f) vs Δ₀/2π (MHz) and Γ₂ (1/μs)",
            best("fluctuators", "constant_dd"),
            vec![
                SweepAxis::numeric("delta_mhz", "controller.delta_dd_mhz", &[2.5, 5.0, 10.0, 25.0, 50.0]),
                SweepAxis::numeric("gamma2", "noise.gamma2_per_us", &GAMMA2_GRID),
            ],
        )]),
    });
    for (name, env, title) in [("fig3b", "fluctuators_plus_t1", "fluctuators and T1"), ("fig3c", "white", "white noise")] {
        out.push(ExperimentPreset {
            name,
            description: "state-dependent decoupling: Γ × Γ₂ grid",
            kind: PresetKind::Ensemble(vec![sweep(
                &name[4..],
                &format!("{title}: F(t_f) vs Γ (1/μs) and Γ₂ (1/μs)"),
                best(env, "optimal_dd"),
                vec![
                    SweepAxis::numeric("gamma", "measurement.gamma_per_us", &GAMMA_GRID),
                    SweepAxis::numeric("gamma2", "noise.gamma2_per_us", &GAMMA2_GRID),
                ],
            )]),
        });
    }
    for (name, (env, title, strategy)) in ["fig3d", "fig3e", "fig3f"].into_iter().zip(ENVIRONMENTS) {
        out.push(ExperimentPreset {
            name,
            description: "measurement rate × loop delay grid with the environment's best strategy",
            kind: PresetKind::Ensemble(vec![sweep(
                &name[4..],
                &format!("{title}: F(t_f) vs Γ (1/μs) and τ_d (μs)"),
                best(env, strategy),
                vec![
                    SweepAxis::numeric("gamma", "measurement.gamma_per_us", &GAMMA_GRID),
                    SweepAxis::numeric("tau_d", "controller.loop_delay_us", &DELAY_GRID),
                ],
            )]),
        });
    }

    let mut estimations = vec![variant("delayed", &[("controller.estimation", s("delayed"))])];
    for h in [0.5, 1.0, 2.0] {
        estimations.push(variant(
            &format!("attenuated_{h}"),
            &[("controller.estimation", s("attenuated")), ("controller.attenuation_us", f(h))],
        ));
    }
    estimations.push(variant("forward", &[("controller.estimation", s("forward"))]));
    out.push(ExperimentPreset {
        name: "fig4",
        description: "delayed vs attenuated vs forward estimation under loop delay (fluctuators and T1)",
        kind: PresetKind::Ensemble(vec![Panel {
            name: "estimation".into(),
            title: "fluctuators and T1: tail-averaged F vs Γ (1/μs) and τ_d (μs)".into(),
            base: best("fluctuators_plus_t1", "optimal_dd"),
            axes: vec![
                SweepAxis::numeric("gamma", "measurement.gamma_per_us", &[0.5, 1.0, 2.0, 4.0]),
                SweepAxis::numeric("tau_d", "controller.loop_delay_us", &[0.2, 0.5, 1.0]),
                SweepAxis::variants("estimation", estimations),
            ],
            output: OutputSpec::Sweep { x: 0, y: 1, metric: Metric::TailAverage },
            post: Some(PostProcess::EstimationComparison),
        }]),
    });

    out.push(ExperimentPreset {
        name: "fig9",
        description: "deterministic vs record-proportional feedback, per-trajectory traces",
        kind: PresetKind::Ensemble(vec![Panel {
            name: "feedback".into(),
            title: "fluctuators, Δ/2π = 10 MHz: deterministic vs proportional feedback".into(),
            base: base(
                "[simulation]\nt_final_us = 150.0\nn_traj = 100\ncheckpoint_every = 100\n\
                 [noise]\nenvironment = \"fluctuators\"\ngamma2_per_us = 0.019230769230769232\n\
                 [controller]\nstrategy = \"constant_dd\"\ndelta_dd_mhz = 10.0\nestimation = \"forward\"\n",
            ),
            axes: vec![SweepAxis::variants(
                "record_mode",
                vec![
                    variant("deterministic", &[("controller.record_mode", s("deterministic"))]),
                    variant("proportional", &[("controller.record_mode", s("record_proportional"))]),
                ],
            )],
            output: OutputSpec::Curves { per_trajectory: true, traces: 1 },
            post: None,
        }]),
    });

    out.push(ExperimentPreset {
        name: "calibration",
        description: "noise calibration suite: ω ↔ Γ₂ conversion, Γ_eff(Δ) tables, fluctuator PSD",
        kind: PresetKind::Calibration,
    });
    out
}

pub fn find(name: &str) -> Result<ExperimentPreset, CliError> {
    let all = catalog();
    let names: Vec<&str> = all.iter().map(|p| p.name).collect();
    let names = names.join(", ");
    all.into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| CliError::Usage(format!("unknown preset `{name}` (available: {names})")))
}

pub fn check_scale(scale: f64) -> Result<(), CliError> {
    if scale > 0.0 && scale <= 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("scale must lie in (0, 1], got {scale}")))
    }
}

pub fn scale_count(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).round() as usize).max(1)
}

pub fn scale_duration(t: f64, scale: f64) -> f64 {
    (t * scale * 5.0 / 3.0).round().clamp(1.0, t)
}

/// Applies the scale rule and the master seed to a panel's base.
fn scaled_base(base: &FileConfig, scale: f64, seed: u64) -> FileConfig {
    let mut b = base.clone();
    let sim = &mut b.simulation;
    sim.n_traj = Some(scale_count(sim.n_traj.unwrap_or(1000), scale));
    sim.t_final_us = Some(scale_duration(sim.t_final_us.unwrap_or(150.0), scale));
    sim.seed = Some(seed);
    b
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetOptions {
    pub scale: f64,
    pub seed: u64,
    pub workers: Option<usize>,
    pub allow_partial: bool,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self { scale: 0.2, seed: 1, workers: None, allow_partial: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetReport {
    pub dir: PathBuf,
    pub points: usize,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub gamma_per_us: f64,
    pub tau_d_us: f64,
    #[serde(rename = "F_delayed")]
    pub f_delayed: f64,
    #[serde(rename = "F_attenuated_best")]
    pub f_attenuated_best: f64,
    pub attenuation_best_us: f64,
    #[serde(rename = "F_forward")]
    pub f_forward: f64,
    /// `1 − (1 − F_forward)/(1 − F_attenuated_best)`
    pub infidelity_reduction: f64,
}

/// Rows of an estimation sweep condensed per `(Γ, τ_d)`. Groups are the
/// labels `delayed`, `attenuated_<Δt>` and `forward`.
pub fn estimation_comparison(rows: &[SweepRow]) -> Vec<ComparisonRow> {
    let mut keys: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.x, r.y)) {
            keys.push((r.x, r.y));
        }
    }
    keys.into_iter()
        .map(|(x, y)| {
            let at = rows.iter().filter(|r| r.x == x && r.y == y);
            let get = |g: &str| at.clone().find(|r| r.group == g).map_or(f64::NAN, |r| r.f);
            let (mut best, mut best_h) = (f64::NAN, f64::NAN);
            for r in at.clone() {
                if let Some(h) = r.group.strip_prefix("attenuated_").and_then(|h| h.parse::<f64>().ok()) {
                    if !(r.f <= best) {
                        best = r.f;
                        best_h = h;
                    }
                }
            }
            let fwd = get("forward");
            ComparisonRow {
                gamma_per_us: x,
                tau_d_us: y,
                f_delayed: get("delayed"),
                f_attenuated_best: best,
                attenuation_best_us: best_h,
                f_forward: fwd,
                infidelity_reduction: 1.0 - (1.0 - fwd) / (1.0 - best),
            }
        })
        .collect()
}

pub fn run_preset(name: &str, out: &Path, opts: &PresetOptions) -> Result<PresetReport, CliError> {
    check_scale(opts.scale)?;
    let preset = find(name)?;
    let dir = out.join(preset.name);
    artifacts::create_dir(&dir)?;
    eprintln!("preset {} at scale {} -> {}", preset.name, opts.scale, dir.display());
    let (points, mut files) = match &preset.kind {
        PresetKind::Calibration => (0, run_calibration(&dir, opts)?),
        PresetKind::Ensemble(panels) => run_panels(preset.name, panels, &dir, opts)?,
    };
    files.extend(plot::emit_plots(&dir, &plot::PlotOptions::default())?);
    Ok(PresetReport { dir, points, files })
}

fn run_panels(name: &str, panels: &[Panel], dir: &Path, opts: &PresetOptions) -> Result<(usize, Vec<PathBuf>), CliError> {
    for p in panels {
        p.validate()?;
    }
    let mut curves: Vec<CurveRow> = Vec::new();
    let mut sweep_rows: Vec<SweepRow> = Vec::new();
    let mut summary: Vec<SummaryRow> = Vec::new();
    let mut trajectories: Vec<TrajectoryRow> = Vec::new();
    let mut comparison: Vec<ComparisonRow> = Vec::new();
    let mut total = 0;
    for panel in panels {
        let scaled = Panel { base: scaled_base(&panel.base, opts.scale, opts.seed), ..panel.clone() };
        let points = scaled.points()?;
        let mut panel_rows = Vec::new();
        for (i, point) in points.iter().enumerate() {
            let cfg = point.config.resolve()?;
            let (per_traj, traces) = match panel.output {
                OutputSpec::Curves { per_trajectory, traces } => (per_trajectory, traces),
                OutputSpec::Sweep { .. } => (false, 0),
            };
            let run_opts = RunOptions {
                keep_series: per_traj,
                trace_trajectories: traces,
                allow_partial: opts.allow_partial,
                workers: opts.workers,
            };
            let t0 = Instant::now();
            let result = run_ensemble(&cfg, &run_opts)?;
            let label = point.label();
            let point_dir = dir.join("points").join(artifacts::slug(&panel.name)).join(format!("{i:03}_{}", artifacts::slug(&label)));
            artifacts::write_run(&point_dir, &cfg, &result)?;
            let f_final = result.final_fidelity();
            let f_tail = result.time_averaged_fidelity(cfg.t_final * 2.0 / 3.0, cfg.t_final);
            eprintln!(
                "  [{name}/{}] {}/{} {label}: F(t_f) = {f_final:.4}, tail {f_tail:.4} ({:.1} s)",
                panel.name,
                i + 1,
                points.len(),
                t0.elapsed().as_secs_f64()
            );
            summary.push(SummaryRow {
                panel: panel.name.clone(),
                label: label.clone(),
                f_final,
                f_tail,
                stderr_final: *result.stderr.last().unwrap_or(&f64::NAN),
                n_ok: result.n_ok(),
                n_failed: result.failures.len(),
                dir: artifacts::relative(&point_dir, dir).display().to_string(),
            });
            match panel.output {
                OutputSpec::Curves { .. } => {
                    curves.extend(artifacts::curve_rows(&panel.name, &label, &result));
                    if per_traj {
                        for t in &result.trajectories {
                            for (k, &fv) in t.fidelity_sys.iter().enumerate() {
                                trajectories.push(TrajectoryRow {
                                    panel: format!("{} {label}", panel.name),
                                    traj: t.index,
                                    t_us: result.times[k],
                                    f_sys: fv,
                                });
                            }
                        }
                    }
                }
                OutputSpec::Sweep { x, y, metric } => {
                    let group: Vec<&str> = point
                        .labels
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != x && *k != y)
                        .map(|(_, l)| l.as_str())
                        .collect();
                    panel_rows.push(SweepRow {
                        panel: panel.name.clone(),
                        group: group.join(" "),
                        x_name: panel.axes[x].name.clone(),
                        x: point.coords[x].expect("validated numeric"),
                        y_name: panel.axes[y].name.clone(),
                        y: point.coords[y].expect("validated numeric"),
                        f: match metric {
                            Metric::Final => f_final,
                            Metric::TailAverage => f_tail,
                        },
                    });
                }
            }
        }
        if panel.post == Some(PostProcess::EstimationComparison) {
            comparison.extend(estimation_comparison(&panel_rows));
        }
        sweep_rows.extend(panel_rows);
        total += points.len();
    }

    let mut files = Vec::new();
    let mut write = |file: &str, f: &dyn Fn(&Path) -> Result<(), CliError>| -> Result<(), CliError> {
        let path = dir.join(file);
        f(&path)?;
        files.push(path);
        Ok(())
    };
    write(artifacts::SUMMARY, &|p| artifacts::write_rows(p, &summary))?;
    if !curves.is_empty() {
        write(artifacts::CURVES, &|p| artifacts::write_rows(p, &curves))?;
    }
    if !sweep_rows.is_empty() {
        write(artifacts::SWEEP, &|p| artifacts::write_rows(p, &sweep_rows))?;
    }
    if !trajectories.is_empty() {
        write(artifacts::TRAJECTORIES, &|p| artifacts::write_rows(p, &trajectories))?;
    }
    if !comparison.is_empty() {
        for c in &comparison {
            eprintln!(
                "  Γ = {}, τ_d = {}: delayed {:.3}, attenuated {:.4} (Δt = {}), forward {:.4}",
                c.gamma_per_us, c.tau_d_us, c.f_delayed, c.f_attenuated_best, c.attenuation_best_us, c.f_forward
            );
        }
        write("comparison.csv", &|p| artifacts::write_rows(p, &comparison))?;
    }
    Ok((total, files))
}

fn run_calibration(dir: &Path, opts: &PresetOptions) -> Result<Vec<PathBuf>, CliError> {
    let mut summary = CalibrationSummary::default();
    let mut files = Vec::new();
    let sweep = SweepOptions { n_traj: scale_count(1000, opts.scale).max(100), seed: opts.seed, ..SweepOptions::default() };
    files.extend(calibrate::conversion(dir, NoiseKind::White, &[1.0, 2.0, 4.0, 8.0], &sweep, &mut summary)?);
    files.extend(calibrate::conversion(dir, NoiseKind::Fluctuators, &[0.25, 0.5, 1.0, 2.0], &sweep, &mut summary)?);
    let table = TableOptions { n_traj: scale_count(400, opts.scale).max(100), seed: opts.seed, ..TableOptions::default() };
    let gamma2 = 0.5;
    let white: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0].iter().map(|r| r * gamma2).collect();
    let fluct: Vec<f64> = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|r| r * gamma2).collect();
    files.extend(calibrate::dephasing(dir, NoiseKind::White, &white, &[gamma2], &table, &mut summary)?);
    files.extend(calibrate::dephasing(dir, NoiseKind::Fluctuators, &fluct, &[gamma2], &table, &mut summary)?);
    files.extend(calibrate::spectrum(dir, &FluctuatorBand::default(), scale_count(40, opts.scale), opts.seed, &mut summary)?);
    files.push(calibrate::write_summary(dir, &summary)?);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_complete_and_valid() {
        let names: Vec<&str> = catalog().iter().map(|p| p.name).collect();
        for n in ["fig2a", "fig2b", "fig2c", "fig2def", "fig3a", "fig3b", "fig3c", "fig3d", "fig3e", "fig3f", "fig4", "fig9", "calibration"] {
            assert!(names.contains(&n), "missing {n}");
        }
        for p in catalog() {
            if let PresetKind::Ensemble(panels) = p.kind {
                for panel in panels {
                    panel.validate().unwrap();
                    for point in panel.points().unwrap() {
                        point.config.resolve().unwrap_or_else(|e| panic!("{} {}: {e}", p.name, point.label()));
                    }
                }
            }
        }
    }

    #[test]
    fn scale_rule() {
        assert_eq!(scale_count(1000, 0.2), 200);
        assert_eq!(scale_duration(150.0, 0.2), 50.0);
        assert_eq!(scale_duration(150.0, 1.0), 150.0);
        assert_eq!(scale_duration(150.0, 0.001), 1.0);
        assert!(check_scale(0.0).is_err() && check_scale(1.5).is_err() && check_scale(1.0).is_ok());
    }

    #[test]
    fn fig2a_at_scale_is_200_by_50() {
        let PresetKind::Ensemble(panels) = find("fig2a").unwrap().kind else { panic!() };
        let base = scaled_base(&panels[0].base, 0.2, 9);
        let points = Panel { base, ..panels[0].clone() }.points().unwrap();
        assert_eq!(points.len(), 3);
        let cfgs: Vec<_> = points.iter().map(|p| p.config.resolve().unwrap()).collect();
        assert!(cfgs.iter().all(|c| c.n_traj == 200 && c.t_final == 50.0 && c.seed == 9));
        use bellstab_core::controller::Strategy;
        assert_eq!(cfgs[0].strategy, Strategy::NoDecoupling);
        assert!(matches!(cfgs[1].strategy, Strategy::ConstantDD(w) if (w - std::f64::consts::TAU * 25.0).abs() < 1e-9));
        assert_eq!(cfgs[2].strategy, Strategy::OptimalDD);
    }

    #[test]
    fn bad_axes_are_rejected() {
        let base = best("white", "optimal_dd");
        let mut p = sweep("x", "x", base.clone(), vec![SweepAxis::numeric("g", "measurement.gamma_per_us", &[])]);
        assert!(p.validate().is_err());
        p.axes = vec![SweepAxis::numeric("g", "measurement.no_such_key", &[1.0]), SweepAxis::numeric("h", "noise.gamma2_per_us", &[1.0])];
        assert!(p.validate().is_err());
        p.axes = vec![strategies(), SweepAxis::numeric("h", "noise.gamma2_per_us", &[1.0])];
        assert!(p.validate().is_err(), "variant axis used as a heatmap axis");
        assert!(matches!(find("fig7"), Err(CliError::Usage(_))));
    }

    #[test]
    fn comparison_picks_best_attenuation() {
        let row = |g: &str, f: f64| SweepRow {
            panel: "p".into(),
            group: g.into(),
            x_name: "gamma".into(),
            x: 1.0,
            y_name: "tau_d".into(),
            y: 0.5,
            f,
        };
        let rows = vec![row("delayed", 0.25), row("attenuated_0.5", 0.6), row("attenuated_1", 0.8), row("forward", 0.9)];
        let c = estimation_comparison(&rows);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].attenuation_best_us, 1.0);
        assert!((c[0].infidelity_reduction - 0.5).abs() < 1e-12);
    }
}
