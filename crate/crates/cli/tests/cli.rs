use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bellstab_core::config::{load_config, parse_config};

const SMALL: &str = r#"
[simulation]
t_final_us = 2.0
n_traj = 6
checkpoint_every = 10
seed = 42

[noise]
environment = "fluctuators_plus_t1"

[controller]
strategy = "optimal_dd"
loop_delay_us = 0.2
"#;

fn bellstab(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bellstab"));
    cmd.args(args).env_remove("BELLSTAB_WORKERS");
    if let Some(w) = workers {
        cmd.env("BELLSTAB_WORKERS", w);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn svgs(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.ends_with(".svg"))
        .collect();
    v.sort();
    v
}

#[test]
fn run_writes_a_reproducible_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let out = bellstab(&["run", &cfg_path, "--out", a.to_str().unwrap(), "--traces", "2"], Some("1"));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifest.toml", "fidelity.csv", "fidelity.svg", "fidelity_log.svg", "traces/traj_00000.csv", "traces/traj_00001.csv"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    assert!(!a.join("traces/traj_00002.csv").exists());
    let csv = fs::read_to_string(a.join("fidelity.csv")).unwrap();
    assert!(csv.starts_with("t_us,F_sys,F_est,stderr\n"));
    assert_eq!(csv.lines().count(), 1 + 21);

    // the manifest reads back to the same configuration
    let original = load_config(Path::new(&cfg_path)).unwrap();
    let manifest = fs::read_to_string(a.join("manifest.toml")).unwrap();
    assert_eq!(parse_config(&manifest).unwrap(), original);

    // rerunning from the manifest with more workers reproduces the curves bit for bit
    let b = tmp.path().join("b");
    let out = bellstab(&["run", a.join("manifest.toml").to_str().unwrap(), "--out", b.to_str().unwrap(), "--no-plot"], Some("3"));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(a.join("fidelity.csv")).unwrap(), fs::read(b.join("fidelity.csv")).unwrap());
    assert!(svgs(&b).is_empty());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // usage
    assert_eq!(code(&bellstab(&["frobnicate"], None)), 1);
    assert_eq!(code(&bellstab(&["preset", "fig7", "--out", tmp.path().to_str().unwrap()], None)), 1);
    assert_eq!(code(&bellstab(&["preset", "fig2a", "--scale", "1.5"], None)), 1);
    assert_eq!(code(&bellstab(&["run", "x.toml", "--workers", "0"], None)), 1);
    assert_eq!(code(&bellstab(&["--help"], None)), 0);

    // invalid configuration
    let bad = write_config(tmp.path(), &SMALL.replace("loop_delay_us = 0.2", "loop_delay_us = 0.2\nfoo = 1"));
    let out = bellstab(&["run", &bad, "--out", tmp.path().join("r").to_str().unwrap()], None);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("foo"));
    let bad = write_config(tmp.path(), &SMALL.replace("[simulation]", "[simulation]\ncontrol_step_us = 0.0105"));
    let out = bellstab(&["run", &bad, "--out", tmp.path().join("r").to_str().unwrap()], None);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("control_step_us") && err.contains("dt_us"), "{err}");
    assert_eq!(code(&bellstab(&["run", "/no/such/file.toml"], None)), 2);

    // runtime: artifacts present but malformed
    let broken = tmp.path().join("broken");
    fs::create_dir(&broken).unwrap();
    fs::write(broken.join("fidelity.csv"), "t_us,F\n0,1\n").unwrap();
    assert_eq!(code(&bellstab(&["plot", broken.to_str().unwrap()], None)), 3);
    assert!(svgs(&broken).is_empty());
}

#[test]
fn plotting_an_empty_directory_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bellstab(&["plot", tmp.path().to_str().unwrap()], None);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no plottable artifacts"));
    assert!(svgs(tmp.path()).is_empty());
}

#[test]
fn plots_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), SMALL);
    let dir = tmp.path().join("run");
    assert_eq!(code(&bellstab(&["run", &cfg_path, "--out", dir.to_str().unwrap(), "--no-plot"], None)), 0);
    assert_eq!(code(&bellstab(&["plot", dir.to_str().unwrap(), "--log-infidelity"], None)), 0);
    let first = fs::read(dir.join("fidelity_log.svg")).unwrap();
    assert_eq!(code(&bellstab(&["plot", dir.to_str().unwrap(), "--log-infidelity"], None)), 0);
    assert_eq!(first, fs::read(dir.join("fidelity_log.svg")).unwrap());
}

#[test]
fn tiny_curve_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bellstab(&["preset", "fig2a", "--scale", "0.002", "--out", tmp.path().to_str().unwrap()], None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("fig2a");
    let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    for label in ["off", "constant", "optimal"] {
        assert!(summary.contains(&format!(",{label},")), "{summary}");
    }
    assert!(dir.join("curves.csv").is_file());
    assert_eq!(svgs(&dir), ["curves_a.svg"]);
    let manifest = dir.join("points/a/001_constant/manifest.toml");
    let cfg = load_config(&manifest).unwrap();
    assert_eq!((cfg.n_traj, cfg.t_final, cfg.seed), (2, 1.0, 1));
}

#[test]
fn tiny_sweep_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bellstab(&["preset", "fig3d", "--scale", "0.001", "--seed", "5", "--out", tmp.path().to_str().unwrap()], None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("fig3d");
    let sweep = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("panel,group,x_name,x,y_name,y,F\n"));
    assert_eq!(sweep.lines().count(), 1 + 25);
    assert_eq!(svgs(&dir), ["sweep_d.svg"]);
}

#[test]
fn trajectory_preset_keeps_series_and_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bellstab(&["preset", "fig9", "--scale", "0.02", "--out", tmp.path().to_str().unwrap()], None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("fig9");
    let traj = fs::read_to_string(dir.join("trajectories.csv")).unwrap();
    // two record modes × two trajectories × (t_f = 5 μs → 6 checkpoints)
    assert_eq!(traj.lines().count(), 1 + 2 * 2 * 6);
    assert!(dir.join("points/feedback/000_deterministic/traces/traj_00000.csv").is_file());
    assert!(dir.join("points/feedback/001_proportional/traces/traj_00000.csv").is_file());
    assert!(svgs(&dir).contains(&"trajectories_feedback_deterministic.svg".to_string()));
}

#[test]
fn preset_list() {
    let out = bellstab(&["preset", "--list"], None);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["fig2def", "fig3f", "fig4", "fig9", "calibration"] {
        assert!(text.contains(name));
    }
}
