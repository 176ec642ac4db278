//! Two-qubit density matrices, the Bell-basis operator algebra, and exact
//! unitary propagators for the co-/counter-rotating drives plus frequency noise.
//!
//! Basis ordering is `|00⟩, |01⟩, |10⟩, |11⟩` with qubit 1 the left tensor
//! factor and `σz = |0⟩⟨0| − |1⟩⟨1|`. All rates and frequencies are in rad/μs,
//! times in μs, and ℏ = 1.

use std::sync::LazyLock;

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;

use crate::error::StateError;

pub type C64 = Complex64;
pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;
pub type Ket4 = Vector4<C64>;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Hermiticity tolerance on `max |ρ − ρ†|`.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Trace tolerance after a normalized update.
pub const TRACE_TOL: f64 = 1e-10;
/// Float slack allowed below zero on the spectrum.
pub const POSITIVITY_TOL: f64 = 1e-9;

/// The four Bell states, in the order used for Bell-basis matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BellState {
    PsiPlus = 0,
    PsiMinus = 1,
    PhiPlus = 2,
    PhiMinus = 3,
}

impl BellState {
    pub const ALL: [BellState; 4] = [
        BellState::PsiPlus,
        BellState::PsiMinus,
        BellState::PhiPlus,
        BellState::PhiMinus,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn ket(self) -> Ket4 {
        OPS.bell_basis.column(self.index()).into_owned()
    }
}

pub fn kron2(a: &Mat2, b: &Mat2) -> Mat4 {
    let mut out = Mat4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

pub fn pauli_x() -> Mat2 {
    Mat2::new(ZERO, ONE, ONE, ZERO)
}

pub fn pauli_y() -> Mat2 {
    Mat2::new(ZERO, -I, I, ZERO)
}

pub fn pauli_z() -> Mat2 {
    Mat2::new(ONE, ZERO, ZERO, -ONE)
}

/// `|0⟩⟨1|`, lowering `|1⟩ → |0⟩`.
pub fn sigma_minus() -> Mat2 {
    Mat2::new(ZERO, ONE, ZERO, ZERO)
}

fn outer(a: &Ket4, b: &Ket4) -> Mat4 {
    a * b.adjoint()
}

/// Constant operators of the protocol. Every entry is an integer (or
/// half-integer) matrix, so the algebraic identities between them hold exactly.
#[derive(Debug, Clone)]
pub struct OperatorLibrary {
    /// Columns are `|ψ+⟩, |ψ−⟩, |φ+⟩, |φ−⟩` in the computational basis.
    pub bell_basis: Mat4,
    /// Half-parity `N̂ = (σz⁽¹⁾ + σz⁽²⁾)/2`.
    pub half_parity: Mat4,
    pub half_parity_sq: Mat4,
    /// `Ŷ₊/2`, the co-rotating (feedback) drive generator.
    pub y_plus_half: Mat4,
    /// `Ŷ₋/2`, the counter-rotating (decoupling) drive generator.
    pub y_minus_half: Mat4,
    pub x_plus_half: Mat4,
    pub x_minus_half: Mat4,
    pub z_plus_half: Mat4,
    pub z_minus_half: Mat4,
    pub sigma_z1: Mat4,
    pub sigma_z2: Mat4,
    pub sigma_minus1: Mat4,
    pub sigma_minus2: Mat4,
    /// `Ŷ₊/2i = |ψ+⟩⟨φ−| − |φ−⟩⟨ψ+|`.
    pub rot_plus: Mat4,
    /// `Ŷ₋/2i = |φ+⟩⟨ψ−| − |ψ−⟩⟨φ+|`.
    pub rot_minus: Mat4,
    /// `|ψ+⟩⟨ψ+| + |φ−⟩⟨φ−|`.
    pub proj_plus: Mat4,
    /// `|φ+⟩⟨φ+| + |ψ−⟩⟨ψ−|`.
    pub proj_minus: Mat4,
}

impl OperatorLibrary {
    fn build() -> Self {
        let id2 = Mat2::identity();
        let (sx, sy, sz, sm) = (pauli_x(), pauli_y(), pauli_z(), sigma_minus());
        let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
        let psi_p = Ket4::new(ZERO, s, s, ZERO);
        let psi_m = Ket4::new(ZERO, s, -s, ZERO);
        let phi_p = Ket4::new(s, ZERO, ZERO, s);
        let phi_m = Ket4::new(s, ZERO, ZERO, -s);
        let bell_basis = Mat4::from_columns(&[psi_p, psi_m, phi_p, phi_m]);

        let sigma_z1 = kron2(&sz, &id2);
        let sigma_z2 = kron2(&id2, &sz);
        let half = C64::from(0.5);
        let half_parity = (sigma_z1 + sigma_z2) * half;
        let y1 = kron2(&sy, &id2);
        let y2 = kron2(&id2, &sy);
        let zx = kron2(&sz, &sx);
        let xz = kron2(&sx, &sz);
        let zz = kron2(&sz, &sz);
        let xx = kron2(&sx, &sx);

        let p = |k: &Ket4| outer(k, k);
        Self {
            bell_basis,
            half_parity,
            half_parity_sq: half_parity * half_parity,
            y_plus_half: (y1 + y2) * half,
            y_minus_half: (y1 - y2) * half,
            x_plus_half: (zx + xz) * half,
            x_minus_half: (zx - xz) * half,
            z_plus_half: (zz - xx) * half,
            z_minus_half: -(zz + xx) * half,
            sigma_z1,
            sigma_z2,
            sigma_minus1: kron2(&sm, &id2),
            sigma_minus2: kron2(&id2, &sm),
            rot_plus: outer(&psi_p, &phi_m) - outer(&phi_m, &psi_p),
            rot_minus: outer(&phi_p, &psi_m) - outer(&psi_m, &phi_p),
            proj_plus: p(&psi_p) + p(&phi_m),
            proj_minus: p(&phi_p) + p(&psi_m),
        }
    }
}

/// Shared operator constants.
pub static OPS: LazyLock<OperatorLibrary> = LazyLock::new(OperatorLibrary::build);

/// A two-qubit density operator in the computational basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoQubitState {
    rho: Mat4,
}

impl TwoQubitState {
    /// Wraps a matrix after checking Hermiticity, unit trace and positivity.
    pub fn from_matrix(rho: Mat4) -> Result<Self, StateError> {
        let state = Self { rho };
        state.validate()?;
        Ok(state)
    }

    /// Wraps a matrix without checks. Used on hot paths where the update is
    /// known to preserve the invariants.
    #[inline]
    pub fn from_matrix_unchecked(rho: Mat4) -> Self {
        Self { rho }
    }

    pub fn from_ket(ket: &Ket4) -> Self {
        let n = ket.norm_squared();
        Self { rho: outer(ket, ket) / C64::from(n) }
    }

    pub fn bell(which: BellState) -> Self {
        Self::from_ket(&which.ket())
    }

    /// `|+,+⟩ = (|ψ+⟩ + |φ+⟩)/√2`.
    pub fn plus_plus() -> Self {
        Self::from_ket(&Ket4::from_element(C64::from(0.5)))
    }

    /// Computational basis state `|q1 q2⟩`, index `2·q1 + q2`.
    pub fn computational(index: usize) -> Self {
        let mut ket = Ket4::zeros();
        ket[index] = ONE;
        Self::from_ket(&ket)
    }

    pub fn maximally_mixed() -> Self {
        Self { rho: Mat4::identity() * C64::from(0.25) }
    }

    /// Builds a state from its Bell-basis matrix `⟨a|ρ|b⟩`.
    pub fn from_bell_matrix(bell: &Mat4) -> Self {
        let b = &OPS.bell_basis;
        Self { rho: b * bell * b.adjoint() }
    }

    #[inline]
    pub fn matrix(&self) -> &Mat4 {
        &self.rho
    }

    #[inline]
    pub fn into_matrix(self) -> Mat4 {
        self.rho
    }

    /// `⟨a|ρ|b⟩` over the Bell basis.
    pub fn bell_matrix(&self) -> Mat4 {
        let b = &OPS.bell_basis;
        b.adjoint() * self.rho * b
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.rho - self.rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        let herm = (self.rho + self.rho.adjoint()) * C64::from(0.5);
        let eig = SymmetricEigen::new(herm);
        let mut ev = [0.0; 4];
        for (slot, v) in ev.iter_mut().zip(eig.eigenvalues.iter()) {
            *slot = *v;
        }
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn validate(&self) -> Result<(), StateError> {
        if self.rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(StateError::NonFinite);
        }
        let herm = self.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(StateError::NotHermitian(herm));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(StateError::Trace(tr));
        }
        let min = self.min_eigenvalue();
        if min < -POSITIVITY_TOL {
            return Err(StateError::NotPositive(min));
        }
        Ok(())
    }

    /// Clips float dust below zero out of the spectrum and renormalizes.
    /// Eigenvalues under `-POSITIVITY_TOL` are a genuine fault.
    pub fn repair_positivity(&self) -> Result<Self, StateError> {
        let herm = (self.rho + self.rho.adjoint()) * C64::from(0.5);
        let eig = SymmetricEigen::new(herm);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min >= 0.0 {
            return Ok(Self { rho: herm / C64::from(herm.trace().re) });
        }
        if min < -POSITIVITY_TOL {
            return Err(StateError::NotPositive(min));
        }
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        let total: f64 = clipped.iter().sum();
        let mut rho = Mat4::zeros();
        for k in 0..4 {
            let v = eig.eigenvectors.column(k);
            rho += v * v.adjoint() * C64::from(clipped[k] / total);
        }
        Ok(Self { rho })
    }

    /// `U ρ U†`.
    #[inline]
    pub fn conjugate(&self, u: &Mat4) -> Self {
        Self { rho: u * self.rho * u.adjoint() }
    }

    pub fn expectation(&self, op: &Mat4) -> C64 {
        (self.rho * op).trace()
    }

    /// Rescales to unit trace.
    pub fn normalized(&self) -> Self {
        Self { rho: self.rho / C64::from(self.trace()) }
    }

    /// Trace distance `½‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &Self) -> f64 {
        let diff = self.rho - other.rho;
        let herm = (diff + diff.adjoint()) * C64::from(0.5);
        0.5 * SymmetricEigen::new(herm).eigenvalues.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// Bell-basis populations and the coherences the drive laws read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellDecomposition {
    pub psi_plus: f64,
    pub psi_minus: f64,
    pub phi_plus: f64,
    pub phi_minus: f64,
    /// `ρ_{ψ+,φ−}`
    pub psi_plus_phi_minus: C64,
    /// `ρ_{φ+,ψ−}`
    pub phi_plus_psi_minus: C64,
    /// `ρ_{ψ+,φ+}`
    pub psi_plus_phi_plus: C64,
    /// `ρ_{φ+,φ−}`
    pub phi_plus_phi_minus: C64,
    full: Mat4,
}

impl BellDecomposition {
    pub fn population(&self, which: BellState) -> f64 {
        self.full[(which.index(), which.index())].re
    }

    pub fn element(&self, a: BellState, b: BellState) -> C64 {
        self.full[(a.index(), b.index())]
    }

    /// The complete Bell-basis matrix.
    pub fn bell_matrix(&self) -> &Mat4 {
        &self.full
    }

    /// Inverse of [`bell_decompose`].
    pub fn reconstruct(&self) -> TwoQubitState {
        TwoQubitState::from_bell_matrix(&self.full)
    }
}

pub fn bell_decompose(state: &TwoQubitState) -> BellDecomposition {
    use BellState::*;
    let full = state.bell_matrix();
    let el = |a: BellState, b: BellState| full[(a.index(), b.index())];
    BellDecomposition {
        psi_plus: el(PsiPlus, PsiPlus).re,
        psi_minus: el(PsiMinus, PsiMinus).re,
        phi_plus: el(PhiPlus, PhiPlus).re,
        phi_minus: el(PhiMinus, PhiMinus).re,
        psi_plus_phi_minus: el(PsiPlus, PhiMinus),
        phi_plus_psi_minus: el(PhiPlus, PsiMinus),
        psi_plus_phi_plus: el(PsiPlus, PhiPlus),
        phi_plus_phi_minus: el(PhiPlus, PhiMinus),
        full,
    }
}

/// `ρ ↦ U ρ U†` in place, writing the lower triangle as the mirror of the
/// upper one so the result stays exactly Hermitian over long runs.
#[inline]
pub fn conjugate_in_place(rho: &mut Mat4, u: &Mat4) {
    let m = u * *rho * u.adjoint();
    for i in 0..4 {
        rho[(i, i)] = C64::from(m[(i, i)].re);
        for j in i + 1..4 {
            rho[(i, j)] = m[(i, j)];
            rho[(j, i)] = m[(i, j)].conj();
        }
    }
}

/// Fidelity to the target `|ψ+⟩`, i.e. `⟨ψ+|ρ|ψ+⟩`.
#[inline]
pub fn fidelity_to_target(state: &TwoQubitState) -> f64 {
    let r = state.matrix();
    0.5 * (r[(1, 1)].re + r[(2, 2)].re + r[(1, 2)].re + r[(2, 1)].re)
}

/// `Tr ρ²`.
pub fn purity(state: &TwoQubitState) -> f64 {
    state.matrix().iter().map(|z| z.norm_sqr()).sum()
}

/// `exp(−i(ΩŶ₊ + ΔŶ₋)dt/2)` from its closed form: independent rotations by
/// angle `Ω·dt` in `{ψ+, φ−}` and `Δ·dt` in `{φ+, ψ−}`.
pub fn control_unitary(omega: f64, delta: f64, dt: f64) -> Mat4 {
    let ops = &*OPS;
    let (so, co) = (omega * dt).sin_cos();
    let (sd, cd) = (delta * dt).sin_cos();
    ops.proj_plus * C64::from(co)
        + ops.rot_plus * C64::from(so)
        + ops.proj_minus * C64::from(cd)
        + ops.rot_minus * C64::from(sd)
}

/// The Hermitian generator `ΩŶ₊/2 + ΔŶ₋/2 + ω(χ₁σz⁽¹⁾ + χ₂σz⁽²⁾)/2`.
pub fn total_generator(omega: f64, delta: f64, chi1: f64, chi2: f64, noise_amplitude: f64) -> Mat4 {
    let ops = &*OPS;
    let half = 0.5 * noise_amplitude;
    ops.y_plus_half * C64::from(omega)
        + ops.y_minus_half * C64::from(delta)
        + ops.sigma_z1 * C64::from(half * chi1)
        + ops.sigma_z2 * C64::from(half * chi2)
}

/// `exp(−i H t)` for Hermitian `H` via its eigendecomposition.
pub fn hermitian_propagator(h: &Mat4, t: f64) -> Mat4 {
    let eig = SymmetricEigen::new(*h);
    let phases = eig.eigenvalues.map(|e| C64::from_polar(1.0, -e * t));
    let v = &eig.eigenvectors;
    v * Mat4::from_diagonal(&phases) * v.adjoint()
}

/// `exp(−i dt (a σy + b σz)/2)` in closed form.
#[inline]
pub fn qubit_rotation(a: f64, b: f64, dt: f64) -> Mat2 {
    let n = a.hypot(b);
    if n == 0.0 {
        return Mat2::identity();
    }
    let (s, c) = (0.5 * n * dt).sin_cos();
    let (ua, ub) = (s * a / n, s * b / n);
    Mat2::new(C64::new(c, -ub), C64::from(-ua), C64::from(ua), C64::new(c, ub))
}

/// Full step propagator including the frequency noise.
///
/// The generator splits into commuting single-qubit terms
/// `[(Ω+Δ)σy + ωχ₁σz]/2 ⊗ 𝟙 + 𝟙 ⊗ [(Ω−Δ)σy + ωχ₂σz]/2`, so the exact
/// exponential is a Kronecker product of two SU(2) rotations.
/// [`hermitian_propagator`] on [`total_generator`] gives the same matrix.
#[inline]
pub fn total_unitary(omega: f64, delta: f64, chi1: f64, chi2: f64, noise_amplitude: f64, dt: f64) -> Mat4 {
    let u1 = qubit_rotation(omega + delta, noise_amplitude * chi1, dt);
    let u2 = qubit_rotation(omega - delta, noise_amplitude * chi2, dt);
    kron2(&u1, &u2)
}
