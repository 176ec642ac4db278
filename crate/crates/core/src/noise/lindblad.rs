use nalgebra::SymmetricEigen;

use crate::error::NoiseError;
use crate::quantum::{Mat4, TwoQubitState, C64, OPS};

/// A jump operator, stored compactly when it is a real diagonal matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JumpOperator {
    Diagonal([f64; 4]),
    Dense(Mat4),
}

impl JumpOperator {
    /// Picks the diagonal representation whenever the matrix allows it.
    pub fn from_matrix(m: Mat4) -> Self {
        let off_diagonal = (0..4).any(|i| (0..4).any(|j| i != j && m[(i, j)] != C64::from(0.0)));
        if off_diagonal || m.diagonal().iter().any(|z| z.im != 0.0) {
            JumpOperator::Dense(m)
        } else {
            JumpOperator::Diagonal([m[(0, 0)].re, m[(1, 1)].re, m[(2, 2)].re, m[(3, 3)].re])
        }
    }

    pub fn matrix(&self) -> Mat4 {
        match self {
            JumpOperator::Diagonal(d) => Mat4::from_diagonal(&d.map(C64::from).into()),
            JumpOperator::Dense(m) => *m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub operator: JumpOperator,
    /// 1/μs
    pub rate: f64,
}

/// The jump/no-jump map
/// `ρ ↦ Ĵ₀ρĴ₀† + Σ_k (γ_k dt) Ĵ_k ρ Ĵ_k†`, `Ĵ₀ = √(𝟙 − Σ_k (γ_k dt) Ĵ_k†Ĵ_k)`,
/// prepared for one fixed `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladChannel {
    jumps: Vec<Jump>,
    dt: f64,
    kernel: Kernel,
}

#[derive(Debug, Clone, PartialEq)]
enum Kernel {
    Identity,
    /// `Ĵ₀` is diagonal: the no-jump branch and every diagonal jump collapse
    /// into an elementwise multiplier; dense jumps (pre-scaled by √(γdt))
    /// are added on top.
    Elementwise { multiplier: [[f64; 4]; 4], dense: Vec<Mat4> },
    General { j0: Mat4, scaled: Vec<Mat4> },
}

impl LindbladChannel {
    pub fn new(jumps: Vec<Jump>, dt: f64) -> Result<Self, NoiseError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(NoiseError::InvalidDuration(dt));
        }
        if let Some(j) = jumps.iter().find(|j| !(j.rate >= 0.0 && j.rate.is_finite())) {
            return Err(NoiseError::InvalidParameter(format!("jump rate must be finite and nonnegative, got {}", j.rate)));
        }
        let jumps: Vec<Jump> = jumps.into_iter().filter(|j| j.rate > 0.0).collect();
        if jumps.is_empty() {
            return Ok(Self { jumps, dt, kernel: Kernel::Identity });
        }

        let mut j0_sq = Mat4::identity();
        for j in &jumps {
            let m = j.operator.matrix();
            j0_sq -= m.adjoint() * m * C64::from(j.rate * dt);
        }
        let j0_sq = (j0_sq + j0_sq.adjoint()) * C64::from(0.5);
        let diagonal = (0..4).all(|i| (0..4).all(|k| i == k || j0_sq[(i, k)] == C64::from(0.0)));

        let kernel = if diagonal {
            let d: Vec<f64> = (0..4).map(|i| j0_sq[(i, i)].re).collect();
            let min = d.iter().copied().fold(f64::INFINITY, f64::min);
            if min < 0.0 {
                return Err(NoiseError::NoJumpNotPositive { dt, min_eigenvalue: min });
            }
            let j0: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
            let mut multiplier = [[0.0; 4]; 4];
            for (i, row) in multiplier.iter_mut().enumerate() {
                for (k, m) in row.iter_mut().enumerate() {
                    *m = if i == k { d[i] } else { j0[i] * j0[k] };
                }
            }
            let mut dense = Vec::new();
            for j in &jumps {
                let w = j.rate * dt;
                match j.operator {
                    JumpOperator::Diagonal(e) => {
                        for (i, row) in multiplier.iter_mut().enumerate() {
                            for (k, m) in row.iter_mut().enumerate() {
                                *m += w * e[i] * e[k];
                            }
                        }
                    }
                    JumpOperator::Dense(m) => dense.push(m * C64::from(w.sqrt())),
                }
            }
            Kernel::Elementwise { multiplier, dense }
        } else {
            let eig = SymmetricEigen::new(j0_sq);
            let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            if min < 0.0 {
                return Err(NoiseError::NoJumpNotPositive { dt, min_eigenvalue: min });
            }
            let mut j0 = Mat4::zeros();
            for k in 0..4 {
                let v = eig.eigenvectors.column(k);
                j0 += v * v.adjoint() * C64::from(eig.eigenvalues[k].sqrt());
            }
            let scaled = jumps.iter().map(|j| j.operator.matrix() * C64::from((j.rate * dt).sqrt())).collect();
            Kernel::General { j0, scaled }
        };
        Ok(Self { jumps, dt, kernel })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kernel, Kernel::Identity)
    }

    /// Applies the map to a density matrix in place.
    #[inline]
    pub fn apply_in_place(&self, rho: &mut Mat4) {
        match &self.kernel {
            Kernel::Identity => {}
            Kernel::Elementwise { multiplier, dense } => {
                let before = *rho;
                for (i, row) in multiplier.iter().enumerate() {
                    for (k, m) in row.iter().enumerate() {
                        rho[(i, k)] *= *m;
                    }
                }
                for j in dense {
                    *rho += j * before * j.adjoint();
                }
            }
            Kernel::General { j0, scaled } => {
                let before = *rho;
                *rho = j0 * before * j0.adjoint();
                for j in scaled {
                    *rho += j * before * j.adjoint();
                }
            }
        }
    }
}

/// Assembles the standard decoherence channels of the two-qubit model.
#[derive(Debug, Clone, Default)]
pub struct ChannelBuilder {
    jumps: Vec<Jump>,
}

impl ChannelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn jump(mut self, operator: Mat4, rate: f64) -> Self {
        self.jumps.push(Jump { operator: JumpOperator::from_matrix(operator), rate });
        self
    }

    /// `σ̂z⁽ᵏ⁾/√2` on each qubit at `rate`; a single-qubit coherence then
    /// shrinks by `1 − rate·dt` per step.
    pub fn qubit_dephasing(self, rate: f64) -> Self {
        let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
        self.jump(OPS.sigma_z1 * s, rate).jump(OPS.sigma_z2 * s, rate)
    }

    /// `σ̂₋⁽ᵏ⁾/√2` on each qubit at `1/T₁`. An infinite `T₁` adds nothing.
    pub fn relaxation(self, t1: f64) -> Self {
        if t1.is_infinite() {
            return self;
        }
        let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
        let rate = 1.0 / t1;
        self.jump(OPS.sigma_minus1 * s, rate).jump(OPS.sigma_minus2 * s, rate)
    }

    /// `N̂/√2` at the unrecorded rate `(1 − η)Γ`.
    pub fn measurement_dephasing(self, eta: f64, gamma: f64) -> Self {
        let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
        self.jump(OPS.half_parity * s, (1.0 - eta) * gamma)
    }

    pub fn build(self, dt: f64) -> Result<LindbladChannel, NoiseError> {
        LindbladChannel::new(self.jumps, dt)
    }
}

pub fn apply_lindblad(state: &TwoQubitState, channel: &LindbladChannel) -> TwoQubitState {
    let mut rho = *state.matrix();
    channel.apply_in_place(&mut rho);
    TwoQubitState::from_matrix_unchecked(rho)
}

/// Residual dephasing left by an inefficient half-parity measurement.
pub fn measurement_dephasing_channel(eta: f64, gamma: f64, dt: f64) -> Result<LindbladChannel, NoiseError> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(NoiseError::InvalidParameter(format!("efficiency must lie in [0, 1], got {eta}")));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(NoiseError::InvalidParameter(format!("measurement rate must be nonnegative, got {gamma}")));
    }
    ChannelBuilder::new().measurement_dephasing(eta, gamma).build(dt)
}
