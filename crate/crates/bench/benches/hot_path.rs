use std::hint::black_box;

use bellstab_bench::random_state;
use bellstab_core::controller::{forward_estimate, omega_opt, Controller, DriveBuffer, DriveCommand};
use bellstab_core::engine::{run_trajectory, step_system_in_place, SimulationConfig, StepContext};
use bellstab_core::measurement::bayesian_update_in_place;
use bellstab_core::noise::{build_fluctuator_set, psd_estimate, FluctuatorBand};
use bellstab_core::bell_decompose;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn step(c: &mut Criterion) {
    let cfg = SimulationConfig::default();
    let ctx = StepContext::new(&cfg).unwrap();
    let s = random_state(1);
    let cmd = DriveCommand { omega: 12.0, delta: 157.0, issued_at: 0.0 };
    c.bench_function("bayesian_update", |b| {
        let mut rho = *s.matrix();
        b.iter(|| {
            rho = *s.matrix();
            bayesian_update_in_place(&mut rho, black_box(0.3), ctx.strength).unwrap();
        })
    });
    c.bench_function("step_system", |b| {
        let mut rho = *s.matrix();
        b.iter(|| {
            rho = *s.matrix();
            step_system_in_place(&mut rho, black_box(0.3), &cmd, (0.2, -0.1), &ctx).unwrap();
        })
    });
}

fn control(c: &mut Criterion) {
    let cfg = SimulationConfig::default().controller_config();
    let s = random_state(2);
    let d = bell_decompose(&s);
    c.bench_function("omega_opt", |b| b.iter(|| omega_opt(black_box(&d), cfg.control_step)));
    let mut buf = DriveBuffer::new(cfg.delay_cycles(), cfg.idle_command());
    for k in 0..cfg.delay_cycles() {
        buf.push(DriveCommand { omega: (k as f64).sin() * 50.0, delta: 157.0, issued_at: k as f64 * cfg.control_step });
    }
    let channel = cfg.cycle_channel().unwrap();
    c.bench_function("forward_estimate_50_cycles", |b| b.iter(|| forward_estimate(black_box(&s), &buf, &cfg, &channel).unwrap()));
    c.bench_function("control_cycle", |b| {
        let mut ctrl = Controller::new(cfg, s).unwrap();
        let mut k = 0.0;
        b.iter(|| {
            k += 1.0;
            ctrl.control_cycle(black_box(0.1), k * cfg.control_step).unwrap()
        })
    });
}

fn trajectory(c: &mut Criterion) {
    let mut g = c.benchmark_group("trajectory");
    g.sample_size(10);
    let cfg = SimulationConfig { t_final: 1.0, n_traj: 1, checkpoint_every: 100, ..SimulationConfig::default() };
    g.bench_function("one_us_constant_dd", |b| b.iter(|| run_trajectory(black_box(&cfg), 0).unwrap()));
    g.finish();
}

fn spectrum(c: &mut Criterion) {
    let mut g = c.benchmark_group("noise");
    g.sample_size(10);
    let band = FluctuatorBand::default();
    let (n, dt) = (1usize << 15, 0.002);
    let set = build_fluctuator_set(&band, n as f64 * dt, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let samples = set.sample_grid(dt, n);
    g.bench_function("fluctuator_sample_grid_32k", |b| b.iter(|| set.sample_grid(black_box(dt), n)));
    g.bench_function("psd_estimate_32k", |b| b.iter(|| psd_estimate(black_box(&samples), dt).unwrap()));
    g.finish();
}

criterion_group!(benches, step, control, trajectory, spectrum);
criterion_main!(benches);
