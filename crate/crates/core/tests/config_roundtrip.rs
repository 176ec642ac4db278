use std::f64::consts::TAU;

use bellstab_core::config::{load_config, manifest, parse_config, FileConfig};
use bellstab_core::controller::{Estimation, RecordMode, Strategy as Drive};
use bellstab_core::engine::{InitialState, NoiseEnvironment, SimulationConfig};
use bellstab_core::measurement::MeasurementConfig;
use bellstab_core::ConfigError;
use proptest::prelude::*;

fn arb_config() -> impl Strategy<Value = SimulationConfig> {
    (
        (1usize..=20, 1usize..=100, 0usize..=100, 1usize..=500),
        (0.1f64..20.0, 0.01f64..=1.0, 0.0f64..0.5),
        prop_oneof![Just(NoiseEnvironment::Fluctuators), Just(NoiseEnvironment::FluctuatorsPlusT1), Just(NoiseEnvironment::White)],
        prop_oneof![Just(Drive::NoDecoupling), (0.1f64..100.0).prop_map(|f| Drive::ConstantDD(TAU * f)), Just(Drive::OptimalDD)],
        prop_oneof![Just(RecordMode::Deterministic), Just(RecordMode::RecordProportional), Just(RecordMode::Off)],
        (any::<u64>().prop_map(|s| s >> 1), 1usize..2000, 1usize..=4, any::<bool>()),
    )
        .prop_flat_map(|(steps, rates, env, strategy, mode, misc)| {
            let (n_sub, n_cycles, delay_cycles, every) = steps;
            let control_step = 0.001 * n_sub as f64;
            let estimation = prop_oneof![
                Just(Estimation::Delayed),
                (1.0f64..10.0).prop_map(move |k| Estimation::Attenuated(k * control_step)),
                Just(Estimation::ForwardEstimation),
            ];
            (Just((steps, rates, env, strategy, mode, misc, control_step, n_cycles, delay_cycles, every)), estimation)
        })
        .prop_map(|((_, (gamma, eta, gamma2), env, strategy, mode, (seed, n_traj, substeps, fwd), control_step, n_cycles, delay_cycles, every), estimation)| {
            SimulationConfig {
                control_step,
                loop_delay: control_step * delay_cycles as f64,
                t_final: control_step * n_cycles as f64,
                measurement: MeasurementConfig::new(gamma, eta).unwrap(),
                environment: env,
                gamma2,
                strategy,
                estimation,
                record_mode: mode,
                include_forward_dephasing: fwd,
                filter_substeps: substeps,
                initial: InitialState::PhiMinus,
                seed,
                n_traj,
                checkpoint_every: every,
                ..SimulationConfig::default()
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn manifest_reproduces_config(cfg in arb_config()) {
        prop_assume!(cfg.validate().is_ok());
        let text = manifest(&cfg).unwrap();
        prop_assert_eq!(parse_config(&text).unwrap(), cfg.clone());
        // and the explicit form is a fixed point
        let file = FileConfig::from_toml(&text).unwrap();
        prop_assert_eq!(FileConfig::from_toml(&file.to_toml().unwrap()).unwrap(), file);
    }
}

#[test]
fn load_config_reports_path_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[noise]\nenvironment = \"white\"\n[controller]\nstrategy = \"optimal_dd\"\ngamma = 3\n").unwrap();
    let err = load_config(&path).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, ConfigError::Parse(_)));
    assert!(msg.contains("bad.toml") && msg.contains("line 5") && msg.contains("gamma"), "{msg}");
    assert!(matches!(load_config(&dir.path().join("missing.toml")), Err(ConfigError::Io { .. })));
}
