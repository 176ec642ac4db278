//! SVG panels for whatever artifacts a run or preset directory holds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bellstab_core::calibration::DephasingRow;

use crate::artifacts::{self, CurveRow, PsdRow, SweepRow, TrajectoryRow};
use crate::calibrate::ConversionRow;
use crate::svg::{self, Heatmap, LinePlot, PlotError, Scale, Series};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlotOptions {
    /// Also draw fidelity curves as `1 − F` on a log axis.
    pub log_infidelity: bool,
}

/// Groups rows by a key, keeping first-seen order.
fn group_by<T, K: PartialEq + Clone>(rows: &[T], key: impl Fn(&T) -> K) -> Vec<(K, Vec<&T>)> {
    let mut out: Vec<(K, Vec<&T>)> = Vec::new();
    for r in rows {
        let k = key(r);
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => out.push((k, vec![r])),
        }
    }
    out
}

fn save(dir: &Path, name: &str, text: Result<String, PlotError>, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let path = dir.join(name);
    artifacts::write_text(&path, &text?)?;
    files.push(path);
    Ok(())
}

fn fidelity_panels(dir: &Path, stem: &str, title: &str, rows: &[CurveRow], opts: &PlotOptions, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let series: Vec<Series> = group_by(rows, |r| r.label.clone())
        .into_iter()
        .map(|(label, rs)| Series::new(label, rs.iter().map(|r| r.t_us).collect(), rs.iter().map(|r| r.f_sys).collect()))
        .collect();
    let plot = LinePlot { title: title.into(), x_label: "t (μs)".into(), y_label: "F".into(), ..Default::default() };
    save(dir, &format!("{stem}.svg"), svg::line_plot(&series, &plot), files)?;
    if opts.log_infidelity {
        let plot = LinePlot { log_infidelity: true, ..plot };
        save(dir, &format!("{stem}_log.svg"), svg::line_plot(&series, &plot), files)?;
    }
    Ok(())
}

fn heatmaps(dir: &Path, rows: &[SweepRow], files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if rows.is_empty() {
        return Err(PlotError::Empty(format!("{} has no rows", artifacts::SWEEP)).into());
    }
    for ((panel, group), rs) in group_by(rows, |r| (r.panel.clone(), r.group.clone())) {
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for r in &rs {
            if !xs.contains(&r.x) {
                xs.push(r.x);
            }
            if !ys.contains(&r.y) {
                ys.push(r.y);
            }
        }
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let mut values = vec![f64::NAN; xs.len() * ys.len()];
        for r in &rs {
            let ix = xs.iter().position(|v| *v == r.x).expect("collected");
            let iy = ys.iter().position(|v| *v == r.y).expect("collected");
            values[iy * xs.len() + ix] = 1.0 - r.f;
        }
        let title = if group.is_empty() { format!("{panel}: 1 − F") } else { format!("{panel} ({group}): 1 − F") };
        let map = Heatmap {
            title,
            x_label: rs[0].x_name.clone(),
            y_label: rs[0].y_name.clone(),
            x_values: xs,
            y_values: ys,
            values,
            value_label: "1 − F".into(),
            color_scale: Scale::Log,
        };
        let stem = if group.is_empty() { format!("sweep_{panel}") } else { format!("sweep_{panel}_{group}") };
        save(dir, &format!("{}.svg", artifacts::slug(&stem)), svg::heatmap(&map), files)?;
    }
    Ok(())
}

fn trajectory_panels(dir: &Path, rows: &[TrajectoryRow], files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for (panel, rs) in group_by(rows, |r| r.panel.clone()) {
        let mut series: Vec<Series> = group_by(&rs, |r| r.traj)
            .into_iter()
            .map(|(traj, ts)| Series {
                label: format!("trajectory {traj}"),
                x: ts.iter().map(|r| r.t_us).collect(),
                y: ts.iter().map(|r| r.f_sys).collect(),
                opacity: 0.15,
                show_in_legend: false,
            })
            .collect();
        if let Some(first) = series.first_mut() {
            first.opacity = 1.0;
            first.show_in_legend = true;
        }
        let plot = LinePlot { title: format!("{panel}: trajectories"), x_label: "t (μs)".into(), y_label: "F".into(), ..Default::default() };
        save(dir, &format!("{}.svg", artifacts::slug(&format!("trajectories_{panel}"))), svg::line_plot(&series, &plot), files)?;
    }
    Ok(())
}

fn loglog(title: &str, x_label: &str, y_label: &str) -> LinePlot {
    LinePlot {
        title: title.into(),
        x_label: x_label.into(),
        y_label: y_label.into(),
        x_scale: Scale::Log,
        y_scale: Scale::Log,
        log_infidelity: false,
    }
}

/// Writes every panel the artifacts in `dir` support and returns the paths.
/// A directory with nothing plottable is an error, never an empty file.
pub fn emit_plots(dir: &Path, opts: &PlotOptions) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
    }
    let mut files = Vec::new();
    let fidelity = dir.join(artifacts::FIDELITY);
    if fidelity.is_file() {
        let rows = artifacts::read_fidelity(&fidelity)?;
        fidelity_panels(dir, "fidelity", "ensemble fidelity", &rows, opts, &mut files)?;
    }
    let curves = dir.join(artifacts::CURVES);
    if curves.is_file() {
        let rows: Vec<CurveRow> = artifacts::read_rows(&curves)?;
        if rows.is_empty() {
            return Err(PlotError::Empty(format!("{} has no rows", curves.display())).into());
        }
        for (panel, rs) in group_by(&rows, |r| r.panel.clone()) {
            let owned: Vec<CurveRow> = rs.into_iter().cloned().collect();
            let stem = artifacts::slug(&format!("curves_{panel}"));
            fidelity_panels(dir, &stem, &format!("panel {panel}"), &owned, opts, &mut files)?;
        }
    }
    let sweep = dir.join(artifacts::SWEEP);
    if sweep.is_file() {
        heatmaps(dir, &artifacts::read_rows(&sweep)?, &mut files)?;
    }
    let traj = dir.join(artifacts::TRAJECTORIES);
    if traj.is_file() {
        trajectory_panels(dir, &artifacts::read_rows(&traj)?, &mut files)?;
    }
    let psd = dir.join(artifacts::PSD);
    if psd.is_file() {
        let rows: Vec<PsdRow> = artifacts::read_rows(&psd)?;
        let s = Series::new("S(f)", rows.iter().map(|r| r.f_mhz).collect(), rows.iter().map(|r| r.power).collect());
        save(dir, "psd.svg", svg::line_plot(&[s], &loglog("fluctuator spectrum", "f (MHz)", "S(f)")), &mut files)?;
    }
    for kind in ["white", "fluctuators"] {
        let conv = dir.join(format!("conversion_{kind}.csv"));
        if conv.is_file() {
            let rows: Vec<ConversionRow> = artifacts::read_rows(&conv)?;
            let s = Series::new(
                "Γ₂(ω)",
                rows.iter().map(|r| r.omega_rad_per_us).collect(),
                rows.iter().map(|r| r.gamma2_per_us).collect(),
            );
            let plot = loglog(&format!("{kind}: dephasing vs noise amplitude"), "ω (rad/μs)", "Γ₂ (1/μs)");
            save(dir, &format!("conversion_{kind}.svg"), svg::line_plot(&[s], &plot), &mut files)?;
        }
        let deph = dir.join(format!("dephasing_{kind}.csv"));
        if deph.is_file() {
            let rows: Vec<DephasingRow> = artifacts::read_rows(&deph)?;
            let mut by_gamma2: BTreeMap<u64, Vec<&DephasingRow>> = BTreeMap::new();
            for r in &rows {
                by_gamma2.entry(r.gamma2_per_us.to_bits()).or_default().push(r);
            }
            let series: Vec<Series> = by_gamma2
                .values()
                .map(|rs| {
                    Series::new(
                        format!("Γ₂ = {}", rs[0].gamma2_per_us),
                        rs.iter().map(|r| r.delta_rad_per_us).collect(),
                        rs.iter().map(|r| r.gamma_eff_per_us).collect(),
                    )
                })
                .collect();
            let plot = loglog(&format!("{kind}: effective dephasing under decoupling"), "Δ (rad/μs)", "Γ_eff (1/μs)");
            save(dir, &format!("dephasing_{kind}.svg"), svg::line_plot(&series, &plot), &mut files)?;
        }
    }
    if files.is_empty() {
        return Err(PlotError::Empty(format!("no plottable artifacts in {}", dir.display())).into());
    }
    Ok(files)
}
