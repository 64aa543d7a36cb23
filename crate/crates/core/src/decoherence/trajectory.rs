//! Monte Carlo unraveling of the memory master equation into pure-state
//! trajectories with random σz and σ− jumps (waiting-time method).
//!
//! The no-jump evolution `exp(−½ Σ L†L t)` is diagonal in the computational
//! basis and every jump operator maps basis states to basis states with real
//! coefficients, so a trajectory is a real 4-vector throughout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{DecayRates, DephasingConvention, ExposureIntervals, ExposureSegment, MemoryTechnology};
use crate::error::{Error, Result};

const BATCH: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryEstimate {
    pub n_traj: u64,
    /// Mean singlet overlap across trajectories.
    pub fidelity: f64,
    pub standard_error: f64,
    /// Fraction of trajectories that never jumped.
    pub zero_jump_fraction: f64,
    pub zero_jump_standard_error: f64,
}

type Amp = [f64; 4];

/// Bit of qubit A (high) or B (low) in a basis index.
fn bit(index: usize, on_a: bool) -> usize {
    if on_a {
        (index >> 1) & 1
    } else {
        index & 1
    }
}

/// Per-basis-state decay rate of the squared norm, `⟨k|Σ L†L|k⟩`.
fn norm_decay(rates: DecayRates, seg: &ExposureSegment) -> [f64; 4] {
    let mut g = [0.0; 4];
    for (k, gk) in g.iter_mut().enumerate() {
        for (on_a, active) in [(true, seg.a_active), (false, seg.b_active)] {
            if active {
                *gk += rates.gamma1 * bit(k, on_a) as f64 + rates.gamma_phi;
            }
        }
    }
    g
}

fn norm_sq_after(psi: &Amp, decay: &[f64; 4], t: f64) -> f64 {
    psi.iter().zip(decay).map(|(c, g)| c * c * (-g * t).exp()).sum()
}

fn evolve(psi: &mut Amp, decay: &[f64; 4], t: f64) {
    for (c, g) in psi.iter_mut().zip(decay) {
        *c *= (-0.5 * g * t).exp();
    }
}

fn normalize(psi: &mut Amp) {
    let n = psi.iter().map(|c| c * c).sum::<f64>().sqrt();
    for c in psi.iter_mut() {
        *c /= n;
    }
}

#[derive(Clone, Copy)]
enum Jump {
    Lower { on_a: bool },
    Dephase { on_a: bool },
}

fn apply(psi: &Amp, jump: Jump) -> Amp {
    let mut out = [0.0; 4];
    match jump {
        Jump::Lower { on_a } => {
            let mask = if on_a { 2 } else { 1 };
            for k in 0..4 {
                if k & mask != 0 {
                    out[k & !mask] += psi[k];
                }
            }
        }
        Jump::Dephase { on_a } => {
            for k in 0..4 {
                out[k] = if bit(k, on_a) == 1 { -psi[k] } else { psi[k] };
            }
        }
    }
    out
}

fn choose_jump(psi: &Amp, rates: DecayRates, seg: &ExposureSegment, rng: &mut ChaCha8Rng) -> Jump {
    let mut options: Vec<(Jump, f64)> = Vec::with_capacity(4);
    for (on_a, active) in [(true, seg.a_active), (false, seg.b_active)] {
        if !active {
            continue;
        }
        let excited: f64 = (0..4).filter(|&k| bit(k, on_a) == 1).map(|k| psi[k] * psi[k]).sum();
        options.push((Jump::Lower { on_a }, rates.gamma1 * excited));
        options.push((Jump::Dephase { on_a }, rates.gamma_phi));
    }
    let total: f64 = options.iter().map(|(_, w)| w).sum();
    let mut pick = rng.random::<f64>() * total;
    for &(jump, w) in &options {
        if pick < w {
            return jump;
        }
        pick -= w;
    }
    options.last().expect("at least one active qubit").0
}

/// Solves `Σ c_k² e^{−g_k t} = target` on `[0, horizon]`; the left side is
/// monotone non-increasing in `t`.
fn jump_time(psi: &Amp, decay: &[f64; 4], target: f64, horizon: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, horizon);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm_sq_after(psi, decay, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * horizon {
            break;
        }
    }
    hi
}

/// Runs one trajectory from the singlet; returns (fidelity, jumped).
fn run_trajectory(segments: &[ExposureSegment], rates: DecayRates, rng: &mut ChaCha8Rng) -> (f64, bool) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut psi: Amp = [0.0, s, -s, 0.0];
    let mut jumped = false;
    let mut threshold: f64 = rng.random();
    for seg in segments {
        let decay = norm_decay(rates, seg);
        let mut remaining = seg.duration_s;
        loop {
            if norm_sq_after(&psi, &decay, remaining) > threshold {
                evolve(&mut psi, &decay, remaining);
                break;
            }
            let t = jump_time(&psi, &decay, threshold, remaining);
            evolve(&mut psi, &decay, t);
            remaining -= t;
            let jump = choose_jump(&psi, rates, seg, rng);
            psi = apply(&psi, jump);
            normalize(&mut psi);
            jumped = true;
            threshold = rng.random();
        }
    }
    let overlap = psi[1] - psi[2];
    let norm_sq: f64 = psi.iter().map(|c| c * c).sum();
    (overlap * overlap / 2.0 / norm_sq, jumped)
}

/// Trajectory estimate of the singlet fidelity after the given exposure.
///
/// Trajectories are split into batches of 4096; batch `i` draws from stream
/// `i` of a ChaCha8 generator keyed by `seed`, so results do not depend on
/// the thread count.
pub fn trajectory_fidelity_oracle(
    schedule: &ExposureIntervals,
    tech: &MemoryTechnology,
    convention: DephasingConvention,
    n_traj: u64,
    seed: u64,
) -> Result<TrajectoryEstimate> {
    if n_traj == 0 {
        return Err(Error::Argument("n_traj must be >= 1".into()));
    }
    tech.validate()?;
    let rates = tech.rates(convention);
    let segments = schedule.segments();
    let batches = n_traj.div_ceil(BATCH);
    let partials: Vec<(f64, f64, u64)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let count = BATCH.min(n_traj - b * BATCH);
            let (mut sum, mut sum_sq, mut clean) = (0.0, 0.0, 0u64);
            for _ in 0..count {
                let (f, jumped) = run_trajectory(&segments, rates, &mut rng);
                sum += f;
                sum_sq += f * f;
                clean += u64::from(!jumped);
            }
            (sum, sum_sq, clean)
        })
        .collect();
    let (sum, sum_sq, clean) = partials.iter().fold((0.0, 0.0, 0u64), |acc, p| (acc.0 + p.0, acc.1 + p.1, acc.2 + p.2));
    let n = n_traj as f64;
    let mean = sum / n;
    let var = if n_traj > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    let p0 = clean as f64 / n;
    Ok(TrajectoryEstimate {
        n_traj,
        fidelity: mean,
        standard_error: (var / n).sqrt(),
        zero_jump_fraction: p0,
        zero_jump_standard_error: (p0 * (1.0 - p0) / n).sqrt(),
    })
}
