use rand::Rng;
use rand_distr::StandardNormal;

use crate::quantum::{Mat4, TwoQubitState, C64};

/// `AA†/Tr(AA†)` with Gaussian `A`: full-rank states spread over the whole
/// state space.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R) -> TwoQubitState {
    let a = Mat4::from_fn(|_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let rho = a * a.adjoint();
    let tr = rho.trace().re;
    TwoQubitState::from_matrix_unchecked(rho / C64::from(tr))
}

/// A random pure state.
pub fn random_pure_state<R: Rng + ?Sized>(rng: &mut R) -> TwoQubitState {
    let v = crate::quantum::Ket4::from_fn(|_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    TwoQubitState::from_ket(&(v / C64::from(v.norm())))
}

/// Matrix exponential by scaling and squaring with a truncated Taylor
/// series. Independent of any eigendecomposition.
pub fn expm(a: &Mat4) -> Mat4 {
    let norm = a.iter().map(|z| z.norm()).sum::<f64>();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / C64::from(2f64.powi(s));
    let mut term = Mat4::identity();
    let mut sum = Mat4::identity();
    for k in 1..=30 {
        term = term * scaled / C64::from(k as f64);
        sum += term;
    }
    for _ in 0..s {
        sum = sum * sum;
    }
    sum
}
