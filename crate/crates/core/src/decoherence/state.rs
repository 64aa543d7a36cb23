//! Two-qubit density matrices in the basis {|00⟩, |01⟩, |10⟩, |11⟩},
//! qubit A being the high bit. |0⟩ is the ground state.

use nalgebra::{Complex, Matrix4};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-10;
const FIDELITY_IMAG_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    rho: Matrix4<C64>,
}

impl TwoQubitState {
    /// Wraps a matrix after checking the density-matrix invariants.
    pub fn new(rho: Matrix4<C64>) -> Result<Self> {
        let s = TwoQubitState { rho };
        s.validate()?;
        Ok(s)
    }

    pub(crate) fn from_matrix_unchecked(rho: Matrix4<C64>) -> Self {
        TwoQubitState { rho }
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.rho
    }

    /// |Ψ−⟩⟨Ψ−| with |Ψ−⟩ = (|01⟩ − |10⟩)/√2.
    pub fn bell_singlet() -> Self {
        let mut rho = Matrix4::zeros();
        rho[(1, 1)] = C64::new(0.5, 0.0);
        rho[(2, 2)] = C64::new(0.5, 0.0);
        rho[(1, 2)] = C64::new(-0.5, 0.0);
        rho[(2, 1)] = C64::new(-0.5, 0.0);
        TwoQubitState { rho }
    }

    pub fn maximally_mixed() -> Self {
        TwoQubitState { rho: Matrix4::identity() * C64::new(0.25, 0.0) }
    }

    /// Projector onto a computational basis state, index `2a + b`.
    pub fn basis(index: usize) -> Self {
        let mut rho = Matrix4::zeros();
        rho[(index, index)] = C64::new(1.0, 0.0);
        TwoQubitState { rho }
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    pub fn max_hermitian_deviation(&self) -> f64 {
        let adj = self.rho.adjoint();
        (self.rho - adj).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        // Symmetrize first so the Hermitian solver sees an exactly Hermitian input.
        let h = (self.rho + self.rho.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        let herm = self.max_hermitian_deviation();
        if herm > HERMITIAN_TOL {
            return Err(Error::Numerical(format!("state is not Hermitian (deviation {herm:e})")));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::Numerical(format!("state trace is {tr}, expected 1")));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -POSITIVITY_TOL {
            return Err(Error::Numerical(format!("state has negative eigenvalue {min_eig:e}")));
        }
        Ok(())
    }

    /// Overlap ⟨Ψ−|ρ|Ψ−⟩ with the singlet.
    pub fn fidelity(&self) -> Result<f64> {
        let r = &self.rho;
        let z = (r[(1, 1)] + r[(2, 2)] - r[(1, 2)] - r[(2, 1)]) * 0.5;
        if z.im.abs() > FIDELITY_IMAG_TOL {
            return Err(Error::Numerical(format!("fidelity has imaginary part {:e}", z.im)));
        }
        Ok(z.re)
    }
}

pub fn bell_singlet() -> TwoQubitState {
    TwoQubitState::bell_singlet()
}

pub fn fidelity(state: &TwoQubitState) -> Result<f64> {
    state.fidelity()
}
