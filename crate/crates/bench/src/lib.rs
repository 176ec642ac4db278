//! Shared fixtures for the benchmarks.

use bellstab_core::quantum::{Mat4, C64};
use bellstab_core::TwoQubitState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A full-rank state drawn from the Ginibre ensemble.
pub fn random_state(seed: u64) -> TwoQubitState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Mat4::from_fn(|_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let rho = g * g.adjoint();
    let tr = rho.trace();
    TwoQubitState::from_matrix(rho / tr).expect("Ginibre state is valid")
}
