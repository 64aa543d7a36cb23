//! Fixed-step RK4 integration of the vectorized master equation.
//!
//! ρ is stacked column-major into a 16-vector, so `vec(AρB) = (Bᵀ ⊗ A) vec(ρ)`
//! and the whole right-hand side becomes one 16×16 generator per set of
//! idling qubits.

use nalgebra::{Matrix2, Matrix4, SMatrix, SVector};

use super::state::{TwoQubitState, C64};
use super::{DecayRates, DephasingConvention, ExposureIntervals, MemoryTechnology};
use crate::error::{Error, Result};

pub type Generator = SMatrix<C64, 16, 16>;
type VecRho = SVector<C64, 16>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub dt_max: f64,
    /// Largest accepted elementwise RK4 error estimate, `|ρ_h − ρ_{h/2}| / 15`.
    pub richardson_tol: f64,
    pub max_halvings: u32,
}

impl IntegratorOptions {
    pub fn new(dt_max: f64) -> Self {
        IntegratorOptions { dt_max, richardson_tol: 1e-10, max_halvings: 16 }
    }
}

/// Step bound of one thousandth of the fastest relaxation time.
pub fn default_dt_max(tech: &MemoryTechnology) -> f64 {
    tech.t1_s.min(tech.t2_s) / 1000.0
}

fn kron(a: &Matrix4<C64>, b: &Matrix4<C64>) -> Generator {
    let mut out = Generator::zeros();
    for i1 in 0..4 {
        for j1 in 0..4 {
            let s = a[(i1, j1)];
            if s == C64::new(0.0, 0.0) {
                continue;
            }
            for i2 in 0..4 {
                for j2 in 0..4 {
                    out[(4 * i1 + i2, 4 * j1 + j2)] = s * b[(i2, j2)];
                }
            }
        }
    }
    out
}

fn embed(op: &Matrix2<C64>, on_a: bool) -> Matrix4<C64> {
    let id = Matrix2::<C64>::identity();
    let (hi, lo) = if on_a { (op, &id) } else { (&id, op) };
    let mut out = Matrix4::zeros();
    for i1 in 0..2 {
        for j1 in 0..2 {
            for i2 in 0..2 {
                for j2 in 0..2 {
                    out[(2 * i1 + i2, 2 * j1 + j2)] = hi[(i1, j1)] * lo[(i2, j2)];
                }
            }
        }
    }
    out
}

/// σ− = |0⟩⟨1| on one qubit.
pub(crate) fn lowering(on_a: bool) -> Matrix4<C64> {
    let mut s = Matrix2::zeros();
    s[(0, 1)] = C64::new(1.0, 0.0);
    embed(&s, on_a)
}

pub(crate) fn pauli_z(on_a: bool) -> Matrix4<C64> {
    let s = Matrix2::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0));
    embed(&s, on_a)
}

fn dissipator_superop(l: &Matrix4<C64>) -> Generator {
    let id = Matrix4::<C64>::identity();
    let ldl = l.adjoint() * l;
    let half = C64::new(0.5, 0.0);
    kron(&l.map(|z| z.conj()), l) - kron(&id, &ldl) * half - kron(&ldl.transpose(), &id) * half
}

/// Generator of `∂t ρ = −i[H, ρ] + Σ D(L, ρ)` with `H = I` and the jump
/// operators of the idling qubits.
pub fn liouvillian(rates: DecayRates, a_active: bool, b_active: bool) -> Generator {
    let id = Matrix4::<C64>::identity();
    let h = id;
    let mut gen = (kron(&id, &h) - kron(&h.transpose(), &id)) * C64::new(0.0, -1.0);
    for (on_a, active) in [(true, a_active), (false, b_active)] {
        if !active {
            continue;
        }
        let l1 = lowering(on_a) * C64::new(rates.gamma1.sqrt(), 0.0);
        let l2 = pauli_z(on_a) * C64::new(rates.gamma_phi.sqrt(), 0.0);
        gen += dissipator_superop(&l1) + dissipator_superop(&l2);
    }
    gen
}

fn to_vec(rho: &Matrix4<C64>) -> VecRho {
    VecRho::from_iterator(rho.iter().copied())
}

fn from_vec(v: &VecRho) -> Matrix4<C64> {
    Matrix4::from_iterator(v.iter().copied())
}

fn rk4(gen: &Generator, v0: &VecRho, dt: f64, steps: u64) -> VecRho {
    let h = C64::new(dt, 0.0);
    let half = C64::new(0.5 * dt, 0.0);
    let sixth = C64::new(dt / 6.0, 0.0);
    let two = C64::new(2.0, 0.0);
    let mut v = *v0;
    for _ in 0..steps {
        let k1 = gen * v;
        let k2 = gen * (v + k1 * half);
        let k3 = gen * (v + k2 * half);
        let k4 = gen * (v + k3 * h);
        v += (k1 + k2 * two + k3 * two + k4) * sixth;
    }
    v
}

/// Integrates exposure schedules for one technology and convention.
#[derive(Debug, Clone)]
pub struct LindbladSolver {
    only_a: Generator,
    only_b: Generator,
    both: Generator,
    options: IntegratorOptions,
}

impl LindbladSolver {
    pub fn new(tech: &MemoryTechnology, convention: DephasingConvention, options: IntegratorOptions) -> Result<Self> {
        tech.validate()?;
        if !(options.dt_max > 0.0) {
            return Err(Error::Argument(format!("dt_max must be > 0, got {}", options.dt_max)));
        }
        let rates = tech.rates(convention);
        Ok(LindbladSolver {
            only_a: liouvillian(rates, true, false),
            only_b: liouvillian(rates, false, true),
            both: liouvillian(rates, true, true),
            options,
        })
    }

    fn generator(&self, a: bool, b: bool) -> Option<&Generator> {
        match (a, b) {
            (true, true) => Some(&self.both),
            (true, false) => Some(&self.only_a),
            (false, true) => Some(&self.only_b),
            (false, false) => None,
        }
    }

    fn integrate_segment(&self, gen: &Generator, v: &VecRho, duration: f64) -> Result<VecRho> {
        let mut steps = (duration / self.options.dt_max).ceil().max(1.0) as u64;
        let mut coarse = rk4(gen, v, duration / steps as f64, steps);
        for _ in 0..self.options.max_halvings {
            let fine = rk4(gen, v, duration / (2 * steps) as f64, 2 * steps);
            let err = (fine - coarse).iter().map(|z| z.norm()).fold(0.0, f64::max) / 15.0;
            if err <= self.options.richardson_tol {
                return Ok(fine);
            }
            steps *= 2;
            coarse = fine;
        }
        Err(Error::Numerical(format!(
            "step-size underflow: RK4 did not converge within {} halvings",
            self.options.max_halvings
        )))
    }

    pub fn propagate(&self, state: &TwoQubitState, schedule: &ExposureIntervals) -> Result<TwoQubitState> {
        let mut v = to_vec(state.matrix());
        for seg in schedule.segments() {
            if let Some(gen) = self.generator(seg.a_active, seg.b_active) {
                v = self.integrate_segment(gen, &v, seg.duration_s)?;
            }
        }
        let out = TwoQubitState::from_matrix_unchecked(from_vec(&v));
        out.validate()?;
        Ok(out)
    }
}

pub fn lindblad_propagate(
    state: &TwoQubitState,
    schedule: &ExposureIntervals,
    tech: &MemoryTechnology,
    convention: DephasingConvention,
    dt_max: f64,
) -> Result<TwoQubitState> {
    state.validate()?;
    LindbladSolver::new(tech, convention, IntegratorOptions::new(dt_max))?.propagate(state, schedule)
}
