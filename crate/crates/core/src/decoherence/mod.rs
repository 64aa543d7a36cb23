//! Idling-memory decoherence of a shared two-qubit state.
//!
//! Each memory qubit suffers amplitude damping (`√γ1 σ−`) and pure dephasing
//! (`√γφ σz`) while stored. The Hamiltonian is the identity, so only the
//! dissipators shape the evolution. Dissipators on different qubits commute,
//! which makes the final state depend only on how long each qubit idled:
//!
//! ```text
//! F(τA, τB) = ¼(e^{−γ1 τA} + e^{−γ1 τB}) + ½ e^{−(γ1/2 + 2γφ)(τA + τB)}
//! ```

mod lindblad;
mod state;
mod trajectory;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lindblad::{default_dt_max, lindblad_propagate, liouvillian, IntegratorOptions, LindbladSolver};
pub use state::{bell_singlet, fidelity, TwoQubitState, C64, HERMITIAN_TOL, POSITIVITY_TOL, TRACE_TOL};
pub use trajectory::{trajectory_fidelity_oracle, TrajectoryEstimate};

/// A quantum memory platform characterised by its relaxation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryTechnology {
    pub name: String,
    /// Longitudinal relaxation time in seconds. `inf` disables amplitude damping.
    pub t1_s: f64,
    /// Transverse relaxation time in seconds.
    pub t2_s: f64,
}

impl MemoryTechnology {
    pub fn new(name: impl Into<String>, t1_s: f64, t2_s: f64) -> Result<Self> {
        let tech = MemoryTechnology { name: name.into(), t1_s, t2_s };
        tech.validate()?;
        Ok(tech)
    }

    pub fn validate(&self) -> Result<()> {
        // T1 may be infinite (pure dephasing); T2 must be finite for a timeout to exist.
        if !(self.t1_s > 0.0) {
            return Err(Error::Config(format!("{}: T1 must be > 0, got {}", self.name, self.t1_s)));
        }
        if !(self.t2_s > 0.0 && self.t2_s.is_finite()) {
            return Err(Error::Config(format!("{}: T2 must be finite and > 0, got {}", self.name, self.t2_s)));
        }
        Ok(())
    }

    pub fn gamma1(&self) -> f64 {
        1.0 / self.t1_s
    }

    pub fn rates(&self, convention: DephasingConvention) -> DecayRates {
        DecayRates { gamma1: self.gamma1(), gamma_phi: convention.dephasing_rate(self.t2_s) }
    }
}

/// A named entry of the built-in technology catalog.
#[derive(Debug, Clone, Copy)]
pub struct CatalogEntry {
    pub key: &'static str,
    pub label: &'static str,
    pub t1_s: f64,
    pub t2_s: f64,
}

pub const CATALOG: [CatalogEntry; 6] = [
    CatalogEntry { key: "yb171-ion", label: "Ion trap (171Yb+)", t1_s: 12000.0, t2_s: 4200.0 },
    CatalogEntry { key: "er167-rare-earth", label: "Rare earth ions (167Er3+:Y2SiO5)", t1_s: 600.0, t2_s: 1.3 },
    CatalogEntry { key: "ca40-ion", label: "Ion trap (40Ca+)", t1_s: 1.14, t2_s: 0.5 },
    CatalogEntry { key: "nv-nuclear", label: "NV centers in diamond (nuclear spin)", t1_s: 200.0, t2_s: 0.5 },
    CatalogEntry { key: "sc-cavity-a", label: "Superconductor cavity", t1_s: 0.0256, t2_s: 0.034 },
    CatalogEntry { key: "sc-cavity-b", label: "Superconductor cavity", t1_s: 0.0012, t2_s: 0.00072 },
];

impl CatalogEntry {
    pub fn technology(&self) -> MemoryTechnology {
        MemoryTechnology { name: self.key.to_string(), t1_s: self.t1_s, t2_s: self.t2_s }
    }
}

pub fn catalog() -> Vec<MemoryTechnology> {
    CATALOG.iter().map(CatalogEntry::technology).collect()
}

pub fn lookup_technology(key: &str) -> Option<MemoryTechnology> {
    CATALOG.iter().find(|e| e.key == key).map(CatalogEntry::technology)
}

/// How the dephasing jump rate relates to T2.
///
/// With `γφ = 1/T2` on each qubit the singlet coherence decays as
/// `e^{−4t/T2}`, while the threshold timeout `−T2 ln(2F − 1)` presumes
/// `F = (1 + e^{−t/T2})/2`. `TimeoutConsistent` scales the jump rate to
/// `1/(4 T2)` so that both agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DephasingConvention {
    /// γφ = 1/T2 per qubit.
    JumpRate,
    /// γφ = 1/(4·T2) per qubit.
    #[default]
    TimeoutConsistent,
}

impl DephasingConvention {
    pub fn dephasing_rate(self, t2_s: f64) -> f64 {
        match self {
            DephasingConvention::JumpRate => 1.0 / t2_s,
            DephasingConvention::TimeoutConsistent => 1.0 / (4.0 * t2_s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRates {
    pub gamma1: f64,
    pub gamma_phi: f64,
}

/// How long each qubit of a pair idled in memory before the pair was used.
///
/// The qubit stored first idles alone for `|τA − τB|`, then both idle
/// together for `min(τA, τB)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureIntervals {
    pub tau_a_s: f64,
    pub tau_b_s: f64,
}

/// One piece of an exposure schedule with the set of idling qubits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureSegment {
    pub duration_s: f64,
    pub a_active: bool,
    pub b_active: bool,
}

impl ExposureIntervals {
    pub fn new(tau_a_s: f64, tau_b_s: f64) -> Result<Self> {
        for tau in [tau_a_s, tau_b_s] {
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(Error::Argument(format!("exposure must be finite and >= 0, got {tau}")));
            }
        }
        Ok(ExposureIntervals { tau_a_s, tau_b_s })
    }

    pub fn equal(tau_s: f64) -> Result<Self> {
        Self::new(tau_s, tau_s)
    }

    pub fn segments(&self) -> Vec<ExposureSegment> {
        let alone = (self.tau_a_s - self.tau_b_s).abs();
        let joint = self.tau_a_s.min(self.tau_b_s);
        let mut out = Vec::with_capacity(2);
        if alone > 0.0 {
            let a_first = self.tau_a_s > self.tau_b_s;
            out.push(ExposureSegment { duration_s: alone, a_active: a_first, b_active: !a_first });
        }
        if joint > 0.0 {
            out.push(ExposureSegment { duration_s: joint, a_active: true, b_active: true });
        }
        out
    }
}

pub fn closed_form_fidelity(
    tau_a_s: f64,
    tau_b_s: f64,
    tech: &MemoryTechnology,
    convention: DephasingConvention,
) -> Result<f64> {
    let exp = ExposureIntervals::new(tau_a_s, tau_b_s)?;
    Ok(closed_form_fidelity_unchecked(exp.tau_a_s, exp.tau_b_s, tech.rates(convention)))
}

#[inline]
pub(crate) fn closed_form_fidelity_unchecked(tau_a: f64, tau_b: f64, r: DecayRates) -> f64 {
    0.25 * ((-r.gamma1 * tau_a).exp() + (-r.gamma1 * tau_b).exp())
        + 0.5 * (-(0.5 * r.gamma1 + 2.0 * r.gamma_phi) * (tau_a + tau_b)).exp()
}

/// Idle time after which a freshly stored pair drops to `f_th`:
/// `Δt = −T2 ln(2 f_th − 1)`.
pub fn timeout_from_threshold(f_th: f64, tech: &MemoryTechnology) -> Result<f64> {
    if f_th.is_nan() || f_th > 1.0 {
        return Err(Error::Argument(format!("fidelity threshold must be <= 1, got {f_th}")));
    }
    if f_th <= 0.5 {
        return Err(Error::Domain(format!("fidelity threshold {f_th} <= 1/2 gives no finite timeout")));
    }
    Ok(-tech.t2_s * (2.0 * f_th - 1.0).ln() + 0.0)
}

/// Result of the latency budget search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyBudget {
    Bounded(f64),
    /// The threshold sits at or below the long-time fidelity floor.
    AlwaysSatisfiable,
}

impl LatencyBudget {
    pub fn seconds(self) -> Option<f64> {
        match self {
            LatencyBudget::Bounded(s) => Some(s),
            LatencyBudget::AlwaysSatisfiable => None,
        }
    }
}

/// Long-time limit of the fidelity: 1/2 without amplitude damping, else 0.
pub fn fidelity_floor(tech: &MemoryTechnology) -> f64 {
    if tech.gamma1() == 0.0 {
        0.5
    } else {
        0.0
    }
}

/// Largest one-way classical latency `T_C` keeping the verified pair at or
/// above `f_th`, when the first-stored qubit idles `ΔT_Q + T_C` and the
/// second `T_C`. Bisection to a relative tolerance of 1e-9.
pub fn max_tolerable_latency(
    f_th: f64,
    tech: &MemoryTechnology,
    delta_tq_s: f64,
    convention: DephasingConvention,
) -> Result<LatencyBudget> {
    if f_th.is_nan() || f_th > 1.0 {
        return Err(Error::Argument(format!("fidelity threshold must be <= 1, got {f_th}")));
    }
    if !(delta_tq_s >= 0.0 && delta_tq_s.is_finite()) {
        return Err(Error::Argument(format!("arrival skew must be >= 0, got {delta_tq_s}")));
    }
    if f_th <= fidelity_floor(tech) {
        return Ok(LatencyBudget::AlwaysSatisfiable);
    }
    let rates = tech.rates(convention);
    let f = |tc: f64| closed_form_fidelity_unchecked(delta_tq_s + tc, tc, rates);
    if f(0.0) < f_th {
        return Ok(LatencyBudget::Bounded(0.0));
    }
    let mut lo = 0.0;
    let mut hi = tech.t2_s.min(tech.t1_s);
    while f(hi) >= f_th {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numerical("latency bracket diverged".into()));
        }
    }
    const ABS_FLOOR_S: f64 = 1e-15;
    while hi - lo > (1e-9 * hi).max(ABS_FLOOR_S) {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= f_th {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LatencyBudget::Bounded(lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ca40() -> MemoryTechnology {
        lookup_technology("ca40-ion").unwrap()
    }

    fn dephasing_only(t2: f64) -> MemoryTechnology {
        MemoryTechnology::new("dephasing-only", f64::INFINITY, t2).unwrap()
    }

    #[test]
    fn catalog_matches_table() {
        let expect = [(12000.0, 4200.0), (600.0, 1.3), (1.14, 0.5), (200.0, 0.5), (0.0256, 0.034), (0.0012, 0.00072)];
        for (e, (t1, t2)) in CATALOG.iter().zip(expect) {
            assert_eq!((e.t1_s, e.t2_s), (t1, t2), "{}", e.key);
        }
    }

    #[test]
    fn rejects_bad_technology() {
        assert!(MemoryTechnology::new("x", 0.0, 1.0).is_err());
        assert!(MemoryTechnology::new("x", 1.0, -1.0).is_err());
        assert!(MemoryTechnology::new("x", 1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let t = ca40();
        assert_eq!(closed_form_fidelity(0.0, 0.0, &t, DephasingConvention::JumpRate).unwrap(), 1.0);

        let tc = dephasing_only(0.5);
        for tau in [0.01, 0.1, 0.5, 2.0] {
            let f = closed_form_fidelity(tau, tau, &tc, DephasingConvention::TimeoutConsistent).unwrap();
            assert_abs_diff_eq!(f, 0.5 * (1.0 + (-tau / 0.5f64).exp()), epsilon = 1e-15);
        }

        // Ca40, 10 ms each, literal jump rates.
        let f = closed_form_fidelity(0.01, 0.01, &t, DephasingConvention::JumpRate).unwrap();
        let expected = 0.25 * 2.0 * (-0.01f64 / 1.14).exp() + 0.5 * (-(1.0 / 2.28 + 2.0 / 0.5) * 0.02f64).exp();
        assert_abs_diff_eq!(f, expected, epsilon = 1e-15);
        assert!(closed_form_fidelity(-1.0, 0.0, &t, DephasingConvention::JumpRate).is_err());
    }

    #[test]
    fn near_infinite_t1_example() {
        let t = MemoryTechnology::new("proxy", 1e9, 0.5).unwrap();
        let f = closed_form_fidelity(0.5, 0.5, &t, DephasingConvention::TimeoutConsistent).unwrap();
        assert_abs_diff_eq!(f, 0.6839, epsilon = 1e-4);
        assert_abs_diff_eq!(f, 0.5 * (1.0 + (-1.0f64).exp()), epsilon = 1e-8);
    }

    #[test]
    fn timeout_examples() {
        let t = ca40();
        assert_eq!(timeout_from_threshold(1.0, &t).unwrap(), 0.0);
        assert!(timeout_from_threshold(1.0, &t).unwrap().is_sign_positive());
        assert_abs_diff_eq!(timeout_from_threshold(0.81, &t).unwrap(), 0.23902, epsilon = 1e-5);
        let yb = lookup_technology("yb171-ion").unwrap();
        assert_abs_diff_eq!(timeout_from_threshold(0.9, &yb).unwrap(), 937.2, epsilon = 0.1);
        assert!(matches!(timeout_from_threshold(0.5, &t), Err(Error::Domain(_))));
        assert!(matches!(timeout_from_threshold(0.2, &t), Err(Error::Domain(_))));
        assert!(matches!(timeout_from_threshold(1.01, &t), Err(Error::Argument(_))));
    }

    #[test]
    fn latency_budget_examples() {
        let t = ca40();
        let conv = DephasingConvention::TimeoutConsistent;
        let skew = 1e-4;
        let at_zero = closed_form_fidelity(skew, 0.0, &t, conv).unwrap();
        let b = max_tolerable_latency(at_zero, &t, skew, conv).unwrap().seconds().unwrap();
        assert!(b < 1e-12, "{b}");

        let tc = dephasing_only(0.5);
        let b = max_tolerable_latency(0.81, &tc, 0.0, conv).unwrap().seconds().unwrap();
        assert_abs_diff_eq!(b, 0.23902, epsilon = 1e-5);
        assert_abs_diff_eq!(b, timeout_from_threshold(0.81, &tc).unwrap(), epsilon = 1e-6);

        let hi = max_tolerable_latency(0.95, &t, 0.0, conv).unwrap().seconds().unwrap();
        let lo = max_tolerable_latency(0.85, &t, 0.0, conv).unwrap().seconds().unwrap();
        assert!(hi < lo);
    }

    #[test]
    fn latency_budget_edges() {
        let conv = DephasingConvention::TimeoutConsistent;
        let tc = dephasing_only(0.5);
        assert_eq!(max_tolerable_latency(0.5, &tc, 0.0, conv).unwrap(), LatencyBudget::AlwaysSatisfiable);
        assert_eq!(max_tolerable_latency(0.0, &ca40(), 0.0, conv).unwrap(), LatencyBudget::AlwaysSatisfiable);
        // Skew alone already breaks the threshold.
        let b = max_tolerable_latency(0.99, &ca40(), 1.0, conv).unwrap();
        assert_eq!(b, LatencyBudget::Bounded(0.0));
        assert!(max_tolerable_latency(1.5, &ca40(), 0.0, conv).is_err());
        assert!(max_tolerable_latency(0.9, &ca40(), -1.0, conv).is_err());
    }

    #[test]
    fn segments_cover_both_exposures() {
        let e = ExposureIntervals::new(0.3, 0.1).unwrap();
        let s = e.segments();
        assert_eq!(s.len(), 2);
        assert!(s[0].a_active && !s[0].b_active);
        assert_abs_diff_eq!(s[0].duration_s, 0.2, epsilon = 1e-15);
        assert!(s[1].a_active && s[1].b_active);
        assert!(ExposureIntervals::new(0.0, 0.0).unwrap().segments().is_empty());
    }

    proptest! {
        #[test]
        fn round_trip_with_timeout(f in 0.5001f64..1.0, t2 in 1e-3f64..1e4) {
            let tech = dephasing_only(t2);
            let dt = timeout_from_threshold(f, &tech).unwrap();
            let back = closed_form_fidelity(dt, dt, &tech, DephasingConvention::TimeoutConsistent).unwrap();
            prop_assert!((back - f).abs() < 1e-9);
        }

        #[test]
        fn fidelity_strictly_decreasing(
            t1 in 1e-3f64..1e3, t2 in 1e-3f64..1e3,
            a in 0.0f64..1.0, b in 0.0f64..1.0, step in 1e-3f64..0.5,
        ) {
            let tech = MemoryTechnology::new("p", t1, t2).unwrap();
            let scale = t1.min(t2);
            let (a, b, d) = (a * scale, b * scale, step * scale);
            for conv in [DephasingConvention::JumpRate, DephasingConvention::TimeoutConsistent] {
                let f0 = closed_form_fidelity(a, b, &tech, conv).unwrap();
                prop_assert!(closed_form_fidelity(a + d, b, &tech, conv).unwrap() < f0);
                prop_assert!(closed_form_fidelity(a, b + d, &tech, conv).unwrap() < f0);
            }
        }
    }

    #[test]
    fn fidelity_floor_limits() {
        let conv = DephasingConvention::JumpRate;
        let far = 1e4;
        assert!(closed_form_fidelity(far, far, &ca40(), conv).unwrap() < 1e-12);
        let tc = dephasing_only(0.5);
        assert_abs_diff_eq!(closed_form_fidelity(far, far, &tc, conv).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(fidelity_floor(&tc), 0.5);
        assert_eq!(fidelity_floor(&ca40()), 0.0);
    }
}
