//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use entsim::config::{LatencySection, SimConfig};
use entsim::decoherence::{
    catalog, closed_form_fidelity, default_dt_max, lindblad_propagate, lookup_technology, timeout_from_threshold,
    trajectory_fidelity_oracle, DephasingConvention, ExposureIntervals, MemoryTechnology, TwoQubitState, HERMITIAN_TOL,
    POSITIVITY_TOL, TRACE_TOL,
};
use entsim::engine::{run, run_with_traces, RunConfig, StopCondition, TraceSinks};
use entsim::latency::LatencyModel;
use entsim::metrics::{buffer_sweep, fidelity_curve, rate_vs_timeout, write_csv, BufferSweepRow, SweepSeeding};
use entsim::protocol::read_message_trace;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
/// Summary CSV, message trace and event trace of one run.
type Bodies = (Vec<u8>, Vec<u8>, Vec<u8>);

const CONVENTIONS: [DephasingConvention; 2] = [DephasingConvention::JumpRate, DephasingConvention::TimeoutConsistent];

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn c1_timeout_round_trip() -> Outcome {
    let mut worst: f64 = 0.0;
    for t2 in [0.5, 1.3, 4200.0] {
        let tech = MemoryTechnology::new("pure-dephasing", f64::INFINITY, t2).map_err(err)?;
        for f_th in [0.81, 0.9, 0.99] {
            let dt = timeout_from_threshold(f_th, &tech).map_err(err)?;
            let f = closed_form_fidelity(dt, dt, &tech, DephasingConvention::TimeoutConsistent).map_err(err)?;
            worst = worst.max((f - f_th).abs());
            check((f - f_th).abs() < 1e-9, || format!("T2={t2} f_th={f_th}: F(Δt)={f}"))?;
        }
    }
    Ok(format!("9 cases, max |F - f_th| = {worst:.2e}"))
}

/// The seeded random tuples shared by criteria 2 and 4.
fn lindblad_tuples() -> Vec<(MemoryTechnology, f64, f64)> {
    let techs = catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(20_242);
    (0..20)
        .map(|_| {
            let tech = techs[rng.random_range(0..techs.len())].clone();
            let cap = tech.t1_s.min(tech.t2_s);
            (tech, rng.random::<f64>() * cap, rng.random::<f64>() * cap)
        })
        .collect()
}

fn c2_lindblad_vs_closed_form() -> Outcome {
    let mut worst: f64 = 0.0;
    for (tech, ta, tb) in lindblad_tuples() {
        for conv in CONVENTIONS {
            let sched = ExposureIntervals::new(ta, tb).map_err(err)?;
            let rho = lindblad_propagate(&TwoQubitState::bell_singlet(), &sched, &tech, conv, default_dt_max(&tech))
                .map_err(err)?;
            let f = rho.fidelity().map_err(err)?;
            let cf = closed_form_fidelity(ta, tb, &tech, conv).map_err(err)?;
            worst = worst.max((f - cf).abs());
            check((f - cf).abs() < 1e-6, || format!("{} τ=({ta}, {tb}) {conv:?}: {f} vs {cf}", tech.name))?;
        }
    }
    Ok(format!("20 tuples x 2 conventions, max deviation {worst:.2e}"))
}

fn c3_trajectory_oracle() -> Outcome {
    let techs = catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let conv = DephasingConvention::TimeoutConsistent;
    let mut notes = Vec::new();
    for k in 0..5u64 {
        let tech = &techs[rng.random_range(0..techs.len())];
        // Rare-jump regime, where the no-jump probability tracks the fidelity.
        let tau = rng.random_range(0.005..0.05) * tech.t1_s.min(tech.t2_s);
        let sched = ExposureIntervals::equal(tau).map_err(err)?;
        let est = trajectory_fidelity_oracle(&sched, tech, conv, 10_000, 1000 + k).map_err(err)?;
        let cf = closed_form_fidelity(tau, tau, tech, conv).map_err(err)?;
        check((est.fidelity - cf).abs() <= 3.0 * est.standard_error, || {
            format!("{} τ={tau}: MC {} ± {} vs {cf}", tech.name, est.fidelity, est.standard_error)
        })?;
        check((est.zero_jump_fraction - cf).abs() <= 3.0 * est.zero_jump_standard_error, || {
            format!(
                "{} τ={tau}: zero-jump {} ± {} vs {cf}",
                tech.name, est.zero_jump_fraction, est.zero_jump_standard_error
            )
        })?;
        notes.push(format!("{}:{:.1}σ", tech.name, (est.fidelity - cf).abs() / est.standard_error.max(1e-300)));
    }
    Ok(format!("5 tuples, n_traj=1e4 ({})", notes.join(" ")))
}

fn assert_valid(state: &TwoQubitState, what: &str) -> Result<(), String> {
    let herm = state.max_hermitian_deviation();
    let tr = state.trace();
    let min_eig = state.min_eigenvalue();
    check(herm <= HERMITIAN_TOL, || format!("{what}: hermiticity deviation {herm:e}"))?;
    check((tr.re - 1.0).abs() <= TRACE_TOL && tr.im.abs() <= TRACE_TOL, || format!("{what}: trace {tr}"))?;
    check(min_eig >= -POSITIVITY_TOL, || format!("{what}: min eigenvalue {min_eig:e}"))
}

fn c4_state_validity() -> Outcome {
    check(HERMITIAN_TOL == 1e-12 && TRACE_TOL == 1e-9 && POSITIVITY_TOL == 1e-10, || "tolerances changed".into())?;
    let mut count = 0;
    let initial = [
        ("singlet", TwoQubitState::bell_singlet()),
        ("mixed", TwoQubitState::maximally_mixed()),
        ("|11>", TwoQubitState::basis(3)),
    ];
    let fractions = [(0.0, 0.0), (0.01, 0.01), (0.1, 0.05), (0.5, 0.5), (1.0, 0.2), (3.0, 3.0)];
    for tech in catalog() {
        let cap = tech.t1_s.min(tech.t2_s);
        for conv in CONVENTIONS {
            for (name, rho0) in &initial {
                for (fa, fb) in fractions {
                    let sched = ExposureIntervals::new(fa * cap, fb * cap).map_err(err)?;
                    let rho = lindblad_propagate(rho0, &sched, &tech, conv, default_dt_max(&tech)).map_err(err)?;
                    assert_valid(&rho, &format!("{} {conv:?} {name} ({fa}, {fb})", tech.name))?;
                    count += 1;
                }
            }
        }
    }
    for (tech, ta, tb) in lindblad_tuples() {
        for conv in CONVENTIONS {
            let sched = ExposureIntervals::new(ta, tb).map_err(err)?;
            let rho = lindblad_propagate(&TwoQubitState::bell_singlet(), &sched, &tech, conv, default_dt_max(&tech))
                .map_err(err)?;
            assert_valid(&rho, &format!("{} {conv:?} ({ta}, {tb})", tech.name))?;
            count += 1;
        }
    }
    Ok(format!("{count} propagated states valid"))
}

fn ca40() -> MemoryTechnology {
    lookup_technology("ca40-ion").expect("catalog entry")
}

fn c5_protocol_correctness() -> Outcome {
    let mut cfg = RunConfig::new(ca40(), "C", "E");
    cfg.latency = LatencyModel::constant(0.001);
    cfg.timeout_override_s = Some(0.239);
    cfg.source_rate_hz = 10_000.0;
    cfg.stop = StopCondition::Pairs(10_000);
    let r = run(&cfg).map_err(err)?;
    check(r.emitted == 10_000 && r.outcomes.verified == 10_000, || format!("verified {}", r.outcomes.verified))?;
    for n in &r.nodes {
        check(n.counters.verified == 10_000 && n.counters.consumed == 10_000, || {
            format!("node {} verified {} consumed {}", n.name, n.counters.verified, n.counters.consumed)
        })?;
    }
    check(r.discards_total() == 0, || format!("{} discards", r.discards_total()))?;
    check(r.agreement && r.nodes[0].consumed_ids_digest == r.nodes[1].consumed_ids_digest, || {
        "node disagreement".into()
    })?;
    Ok("10000/10000 verified at both nodes, 0 discards, consumed sets identical".into())
}

fn desk_scale(survival: f64, latency: LatencySection) -> SimConfig {
    let mut p = SimConfig::preset("desk-scale").expect("preset");
    p.scaling.arm_survival = Some([survival, survival]);
    p.latency = latency;
    p
}

fn c6_loss_statistics() -> Outcome {
    let mut p = desk_scale(0.1, LatencySection::default());
    p.run.pairs = Some(100_000);
    let r = run(&p.run_config().map_err(err)?).map_err(err)?;
    let n: f64 = 100_000.0;
    let q: f64 = 0.01;
    let sigma = (n * q * (1.0 - q)).sqrt();
    let dev = (r.outcomes.verified as f64 - n * q).abs();
    check(dev <= 3.0 * sigma, || format!("verified {} vs 1000 ± {sigma:.1}", r.outcomes.verified))?;
    check(r.agreement, || "node disagreement".into())?;
    Ok(format!("verified {} (expected 1000, 3σ = {:.1})", r.outcomes.verified, 3.0 * sigma))
}

fn c7_timeout_cutoff() -> Outcome {
    let mut cfg = RunConfig::new(ca40(), "C", "E");
    cfg.latency = LatencyModel::constant(0.30);
    cfg.source_rate_hz = 1000.0;
    cfg.stop = StopCondition::Pairs(1000);
    let mut trace = Vec::new();
    let r = run_with_traces(&cfg, TraceSinks { messages: Some(&mut trace), events: None }).map_err(err)?;
    check((r.timeout_s - 0.23902).abs() < 5e-6, || format!("timeout {}", r.timeout_s))?;
    check(r.outcomes.verified == 0, || format!("{} verified", r.outcomes.verified))?;
    let rows = read_message_trace(trace.as_slice()).map_err(err)?;
    for n in &r.nodes {
        let c = &n.counters;
        check(c.stored == 1000 && c.discarded_timeout == c.stored, || {
            format!("node {}: stored {} timed out {}", n.name, c.stored, c.discarded_timeout)
        })?;
        check(c.verified == 0 && c.discarded_notified == 0 && c.discarded_gap == 0, || {
            format!("node {}: unexpected resolution {c:?}", n.name)
        })?;
        let notified: BTreeSet<u64> =
            rows.iter().filter(|m| m.kind == "discard_notify" && m.sender == n.name).map(|m| m.id).collect();
        let count = rows.iter().filter(|m| m.kind == "discard_notify" && m.sender == n.name).count();
        check(count == 1000 && notified == (0..1000).collect(), || {
            format!("node {}: {count} discard_notify delivered to the partner", n.name)
        })?;
    }
    Ok(format!("timeout {:.5} s, 0 verified, 2x1000 timeouts each matched by a delivered discard_notify", r.timeout_s))
}

fn c8_littles_law() -> Outcome {
    let mut p = desk_scale(0.1, LatencySection::constant(0.010));
    p.run.duration_s = Some(10.0);
    let cfg = p.run_config().map_err(err)?;
    check(cfg.source_rate_hz == 10_000.0, || "desk-scale rate changed".into())?;
    let r = run(&cfg).map_err(err)?;
    let lw = 10_000.0 * 0.1 * 0.010;
    let mut notes = Vec::new();
    for n in &r.nodes {
        let rel = (n.mean_occupancy - lw).abs() / lw;
        check(rel < 0.05, || format!("node {}: mean occupancy {} vs λW = {lw}", n.name, n.mean_occupancy))?;
        notes.push(format!("{} {:.3}", n.name, n.mean_occupancy));
    }
    Ok(format!("λW = {lw}, time-weighted mean occupancy {}", notes.join(", ")))
}

fn non_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] <= w[1])
}

fn occupancy_series(rows: &[BufferSweepRow], node: &str) -> Vec<f64> {
    rows.iter().filter(|r| r.node == node).map(|r| r.mean_occupancy).collect()
}

fn c9_trends() -> Outcome {
    // (a) Curves ordered by decreasing T2; the short-T1 ion trap below NV.
    let conv = DephasingConvention::default();
    let order = ["yb171-ion", "er167-rare-earth", "nv-nuclear", "ca40-ion", "sc-cavity-a", "sc-cavity-b"];
    let grid: Vec<f64> = (0..=60).map(|i| 1e-5 * 10f64.powf(i as f64 / 10.0)).collect();
    let curves: Vec<Vec<(f64, f64)>> = order
        .iter()
        .map(|k| fidelity_curve(&lookup_technology(k).expect("catalog"), conv, &grid).map_err(err))
        .collect::<Result<_, _>>()?;
    for w in curves.windows(2).zip(order.windows(2)) {
        let ((hi, lo), names) = ((&w.0[0], &w.0[1]), w.1);
        for (a, b) in hi.iter().zip(lo.iter()) {
            check(a.1 >= b.1, || format!("(a) {} below {} at t={}", names[0], names[1], a.0))?;
        }
        check(hi[0].1 > lo[0].1, || format!("(a) {} not above {} at t={}", names[0], names[1], hi[0].0))?;
    }
    for (ca, nv) in curves[3].iter().zip(&curves[2]) {
        check(ca.1 < nv.1, || format!("(a) ca40 not below NV at t={}", ca.0))?;
    }

    // (b) Occupancy grows with latency; the two-hop pair holds fewer qubits.
    let latencies = [0.002, 0.005, 0.010, 0.020, 0.040];
    let mut notes = Vec::new();
    for (mode, latency) in [("constant", LatencySection::constant(0.01)), ("lognormal", LatencySection::default())] {
        let mut p = SimConfig::preset("desk-scale").expect("preset");
        p.latency = latency;
        p.run.duration_s = Some(2.0);
        let templates = p.sweep_templates().map_err(err)?;
        let rows = buffer_sweep(&templates, &latencies, SweepSeeding::Common).map_err(err)?;
        for node in ["C", "E", "B", "D"] {
            let s = occupancy_series(&rows, node);
            check(s.len() == latencies.len() && non_decreasing(&s), || format!("(b) {mode} node {node}: {s:?}"))?;
        }
        let (c, b) = (occupancy_series(&rows, "C"), occupancy_series(&rows, "B"));
        check(c.iter().zip(&b).all(|(c, b)| b < c), || format!("(b) {mode}: B {b:?} not below C {c:?}"))?;
        notes.push(format!("{mode} C {:.2}->{:.2}", c[0], c[c.len() - 1]));
    }

    // (c) Higher thresholds mean shorter timeouts and fewer verified pairs.
    let mut p = SimConfig::preset("desk-scale").expect("preset");
    p.run.duration_s = Some(2.0);
    let thresholds = [0.6, 0.7, 0.81, 0.9, 0.95, 0.99, 0.995];
    let rows = rate_vs_timeout(&p.run_config().map_err(err)?, &thresholds, SweepSeeding::Common).map_err(err)?;
    let rates: Vec<f64> = rows.iter().map(|r| r.verified_rate_hz).collect();
    check(rates.windows(2).all(|w| w[0] >= w[1]), || format!("(c) rates {rates:?}"))?;
    check(rates[0] > rates[rates.len() - 1], || format!("(c) flat rates {rates:?}"))?;
    let timeouts: Vec<f64> = rows.iter().map(|r| r.timeout_s).collect();
    check(timeouts.windows(2).all(|w| w[0] > w[1]), || format!("(c) timeouts {timeouts:?}"))?;
    notes.push(format!("rate {:.0}->{:.0}/s", rates[0], rates[rates.len() - 1]));
    Ok(format!("(a) 6 curves ordered; (b) {}; (c) {}", notes[0..2].join(", "), notes[2]))
}

fn report_bodies(cfg: &RunConfig) -> Result<Bodies, String> {
    let (mut m, mut e, mut s) = (Vec::new(), Vec::new(), Vec::new());
    let r = run_with_traces(cfg, TraceSinks { messages: Some(&mut m), events: Some(&mut e) }).map_err(err)?;
    write_csv(&mut s, &[r.summary_row()]).map_err(err)?;
    Ok((s, m, e))
}

fn c10_determinism() -> Outcome {
    let p = SimConfig::preset("desk-scale").expect("preset");
    let cfg = p.run_config().map_err(err)?;
    let a = report_bodies(&cfg)?;
    let b = report_bodies(&cfg)?;
    check(a == b, || "run CSV bodies differ between identical runs".into())?;
    let mut other = cfg.clone();
    other.seed += 1;
    check(report_bodies(&other)?.1 != a.1, || "seed has no effect".into())?;

    let sweep = |seeding| -> Result<Vec<u8>, String> {
        let rows = buffer_sweep(&p.sweep_templates().map_err(err)?, &[0.005, 0.01, 0.02], seeding).map_err(err)?;
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).map_err(err)?;
        Ok(buf)
    };
    for seeding in [SweepSeeding::Common, SweepSeeding::PerRun] {
        check(sweep(seeding)? == sweep(seeding)?, || format!("{seeding:?} sweep CSV bodies differ"))?;
    }
    Ok(format!(
        "summary, message trace ({} B) and event trace ({} B) byte-identical; sweeps identical",
        a.1.len(),
        a.2.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("timeout round trip", c1_timeout_round_trip),
        ("Lindblad vs closed form", c2_lindblad_vs_closed_form),
        ("trajectory oracle", c3_trajectory_oracle),
        ("state validity", c4_state_validity),
        ("protocol correctness", c5_protocol_correctness),
        ("loss statistics", c6_loss_statistics),
        ("timeout cutoff", c7_timeout_cutoff),
        ("Little's law", c8_littles_law),
        ("trend reproduction", c9_trends),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} [{secs:.2}s]: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} [{secs:.2}s]: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
