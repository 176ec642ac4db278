use std::path::PathBuf;
use std::process::ExitCode;

use bellstab_cli::calibrate::{self, CalibrationSummary};
use bellstab_cli::plot::{emit_plots, PlotOptions};
use bellstab_cli::presets::{self, PresetKind, PresetOptions};
use bellstab_cli::{artifacts, CliError, WORKERS_ENV};
use bellstab_core::calibration::{NoiseKind, SweepOptions, TableOptions};
use bellstab_core::config::load_config;
use bellstab_core::engine::{run_ensemble, RunOptions};
use bellstab_core::noise::FluctuatorBand;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bellstab", version, about = "Feedback stabilization of a two-qubit Bell state")]
struct Cli {
    /// Worker threads for trajectory ensembles (default: all cores).
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one ensemble from a TOML config into a run directory.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        /// Write per-cycle traces for the first N trajectories.
        #[arg(long, default_value_t = 0)]
        traces: usize,
        /// Average the surviving trajectories if some fail.
        #[arg(long)]
        allow_partial: bool,
        /// Skip the SVG plots.
        #[arg(long)]
        no_plot: bool,
    },
    /// Run a preset experiment (see `bellstab preset --list`).
    Preset {
        #[arg(required_unless_present = "list")]
        name: Option<String>,
        /// Shrinks trajectory count and duration; 1 is full scale.
        #[arg(long, default_value_t = 0.2)]
        scale: f64,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        allow_partial: bool,
        #[arg(long)]
        list: bool,
    },
    /// Calibrate a noise model: ω ↔ Γ₂ conversion and/or Γ_eff(Δ) table.
    Calibrate {
        #[arg(value_enum)]
        noise: Noise,
        /// Noise amplitudes ω (rad/μs) for the conversion sweep.
        #[arg(long, value_delimiter = ',')]
        omegas: Vec<f64>,
        /// Decoupling amplitudes Δ (rad/μs) for the effective-dephasing table.
        #[arg(long, value_delimiter = ',')]
        deltas: Vec<f64>,
        /// Dephasing rates Γ₂ (1/μs) for the effective-dephasing table.
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        gamma2s: Vec<f64>,
        /// Also estimate the fluctuator spectrum from this many realizations.
        #[arg(long)]
        psd: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        n_traj: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "runs/calibration")]
        out: PathBuf,
    },
    /// Draw SVG plots for the artifacts in a run or preset directory.
    Plot {
        dir: PathBuf,
        /// Also draw 1 − F on a log axis.
        #[arg(long)]
        log_infidelity: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    White,
    Fluctuators,
}

impl From<Noise> for NoiseKind {
    fn from(n: Noise) -> Self {
        match n {
            Noise::White => NoiseKind::White,
            Noise::Fluctuators => NoiseKind::Fluctuators,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.workers == Some(0) {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    match cli.command {
        Command::Run { config, out, traces, allow_partial, no_plot } => {
            let cfg = load_config(&config)?;
            let opts = RunOptions { keep_series: false, trace_trajectories: traces, allow_partial, workers: cli.workers };
            eprintln!("running {} trajectories over {} μs", cfg.n_traj, cfg.t_final);
            let result = run_ensemble(&cfg, &opts)?;
            artifacts::write_run(&out, &cfg, &result)?;
            for f in &result.failures {
                eprintln!("warning: {f}");
            }
            if !no_plot {
                emit_plots(&out, &PlotOptions { log_infidelity: true })?;
            }
            println!("F(t_f) = {:.6} ± {:.6}  ({} of {} trajectories) -> {}", result.final_fidelity(), result.stderr.last().unwrap_or(&f64::NAN), result.n_ok(), cfg.n_traj, out.display());
        }
        Command::Preset { name, scale, out, seed, allow_partial, list } => {
            if list {
                for p in presets::catalog() {
                    let kind = match &p.kind {
                        PresetKind::Ensemble(panels) => format!("{} panel(s)", panels.len()),
                        PresetKind::Calibration => "calibration".into(),
                    };
                    println!("{:<12} {:<12} {}", p.name, kind, p.description);
                }
                return Ok(());
            }
            let name = name.expect("clap requires a name without --list");
            let report = presets::run_preset(&name, &out, &PresetOptions { scale, seed, workers: cli.workers, allow_partial })?;
            println!("{} points, {} files -> {}", report.points, report.files.len(), report.dir.display());
        }
        Command::Calibrate { noise, omegas, deltas, gamma2s, psd, n_traj, seed, out } => {
            if omegas.is_empty() && deltas.is_empty() && psd.is_none() {
                return Err(CliError::Usage("nothing to calibrate: give --omegas, --deltas or --psd".into()));
            }
            artifacts::create_dir(&out)?;
            let kind = NoiseKind::from(noise);
            let mut summary = CalibrationSummary::default();
            if !omegas.is_empty() {
                let opts = SweepOptions { n_traj, seed, ..SweepOptions::default() };
                calibrate::conversion(&out, kind, &omegas, &opts, &mut summary)?;
            }
            if !deltas.is_empty() {
                let opts = TableOptions { n_traj, seed, ..TableOptions::default() };
                calibrate::dephasing(&out, kind, &deltas, &gamma2s, &opts, &mut summary)?;
            }
            if let Some(n) = psd {
                calibrate::spectrum(&out, &FluctuatorBand::default(), n, seed, &mut summary)?;
            }
            calibrate::write_summary(&out, &summary)?;
            emit_plots(&out, &PlotOptions::default())?;
            println!("calibration -> {}", out.display());
        }
        Command::Plot { dir, log_infidelity } => {
            for f in emit_plots(&dir, &PlotOptions { log_infidelity })? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
