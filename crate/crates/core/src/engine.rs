//! Discrete-event core wiring the source, the two quantum arms, the
//! per-node protocol and the classical channel together.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoherence::{
    closed_form_fidelity, timeout_from_threshold, DephasingConvention, ExposureIntervals, MemoryTechnology,
};
use crate::error::{Error, Result};
use crate::latency::{DirectionPolicy, LatencyModel, LatencySampler};
use crate::metrics::{FidelityStats, MessageCounts, NodeReport, OutcomeCounts, RunReport};
use crate::protocol::{
    Actions, ControlMessage, EntanglementId, MessageKind, MessageTraceWriter, NodeState, OverflowPolicy,
    ProtocolConfig, QubitStatus, Side,
};
use crate::time::SimTime;
use crate::topology::{arm_delay, survival_probability, Topology};

/// Default source generation rate.
pub const FULL_SCALE_SOURCE_RATE_HZ: f64 = 1.3e6;

/// One source-to-node arm as the engine sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub node: String,
    /// Photon transit time from the source.
    pub quantum_delay_s: f64,
    pub survival: f64,
}

impl ArmSpec {
    /// Resolves the fewest-hop path from the source to `node`.
    pub fn from_topology(topology: &Topology, node: &str) -> Result<ArmSpec> {
        let path = topology.path_to(node)?;
        Ok(ArmSpec {
            node: node.to_string(),
            quantum_delay_s: arm_delay(&path, topology.signal_speed_km_per_s())?,
            survival: survival_probability(path.total_loss_db)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCondition {
    /// Emit pairs for this many simulated seconds.
    DurationS(f64),
    /// Emit exactly this many pairs.
    Pairs(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arms: [ArmSpec; 2],
    pub technology: MemoryTechnology,
    pub convention: DephasingConvention,
    pub f_th: f64,
    pub timeout_override_s: Option<f64>,
    pub source_rate_hz: f64,
    pub latency: LatencyModel,
    pub direction_policy: DirectionPolicy,
    /// Memory slots per node; `None` is unbounded.
    pub capacity: Option<u32>,
    pub overflow: OverflowPolicy,
    pub stop: StopCondition,
    pub seed: u64,
    /// Nodes learn of a missing photon from its header.
    pub header_loss_detection: bool,
    /// Gap discard delay; defaults to the arrival skew between the arms.
    pub gap_guard_s: Option<f64>,
    pub gap_batching: bool,
    pub partner_deadline_check: bool,
    /// Prune horizon as a multiple of the timeout, at least 1.
    pub prune_factor: f64,
    /// Process remaining events after the last emission window closes.
    pub drain: bool,
    pub histogram_bin_width: f64,
}

impl RunConfig {
    /// Lossless, equal-arm run with the given technology and defaults elsewhere.
    pub fn new(technology: MemoryTechnology, node_a: &str, node_b: &str) -> RunConfig {
        let arm = |node: &str| ArmSpec { node: node.to_string(), quantum_delay_s: 0.0, survival: 1.0 };
        RunConfig {
            arms: [arm(node_a), arm(node_b)],
            technology,
            convention: DephasingConvention::default(),
            f_th: 0.81,
            timeout_override_s: None,
            source_rate_hz: FULL_SCALE_SOURCE_RATE_HZ,
            latency: LatencyModel::default(),
            direction_policy: DirectionPolicy::default(),
            capacity: None,
            overflow: OverflowPolicy::default(),
            stop: StopCondition::DurationS(1.0),
            seed: 0,
            header_loss_detection: true,
            gap_guard_s: None,
            gap_batching: false,
            partner_deadline_check: true,
            prune_factor: 10.0,
            drain: true,
            histogram_bin_width: 0.01,
        }
    }

    pub fn timeout_s(&self) -> Result<f64> {
        match self.timeout_override_s {
            Some(t) => Ok(t),
            None => timeout_from_threshold(self.f_th, &self.technology),
        }
    }

    /// Arrival skew between the arms, `|ΔT_Q|`.
    pub fn arrival_skew_s(&self) -> f64 {
        (self.arms[1].quantum_delay_s - self.arms[0].quantum_delay_s).abs()
    }

    /// Simulated window over which pairs are emitted.
    pub fn duration_s(&self) -> f64 {
        match self.stop {
            StopCondition::DurationS(d) => d,
            StopCondition::Pairs(n) => n as f64 / self.source_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.source_rate_hz > 0.0 && self.source_rate_hz.is_finite()) {
            return bad(format!("source rate must be > 0, got {}", self.source_rate_hz));
        }
        match self.stop {
            StopCondition::DurationS(d) if !(d > 0.0 && d.is_finite()) => {
                return bad(format!("run duration must be > 0, got {d}"));
            }
            StopCondition::Pairs(0) => return bad("pair count must be > 0".into()),
            _ => {}
        }
        if self.arms[0].node == self.arms[1].node {
            return bad("the two arms must end at different nodes".into());
        }
        for arm in &self.arms {
            if !(0.0..=1.0).contains(&arm.survival) {
                return bad(format!("survival of arm {} must lie in [0, 1], got {}", arm.node, arm.survival));
            }
            if !(arm.quantum_delay_s >= 0.0 && arm.quantum_delay_s.is_finite()) {
                return bad(format!("quantum delay of arm {} must be >= 0", arm.node));
            }
        }
        self.technology.validate()?;
        let timeout = self.timeout_s()?;
        if !(timeout >= 0.0 && timeout.is_finite()) {
            return bad(format!("timeout must be finite and >= 0, got {timeout}"));
        }
        self.latency.validate()?;
        if self.capacity == Some(0) {
            return bad("buffer capacity must be >= 1".into());
        }
        if let Some(g) = self.gap_guard_s {
            if !(g >= 0.0 && g.is_finite()) {
                return bad(format!("gap guard must be >= 0, got {g}"));
            }
        }
        // A shorter horizon could forget an announce the partner expects us to match.
        if !(self.prune_factor >= 1.0 && self.prune_factor.is_finite()) {
            return bad(format!("prune factor must be >= 1, got {}", self.prune_factor));
        }
        if !(self.histogram_bin_width > 0.0 && self.histogram_bin_width <= 1.0) {
            return bad(format!("histogram bin width must lie in (0, 1], got {}", self.histogram_bin_width));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventPayload {
    EmitPair(EntanglementId),
    PhotonArrival(Side, EntanglementId),
    PhotonLost(Side, EntanglementId),
    MessageDelivery(Side, ControlMessage),
    TimeoutExpiry(Side, EntanglementId),
    EndOfRun,
}

impl EventPayload {
    fn label(&self) -> (&'static str, Option<Side>, Option<EntanglementId>) {
        match *self {
            EventPayload::EmitPair(id) => ("emit_pair", None, Some(id)),
            EventPayload::PhotonArrival(s, id) => ("photon_arrival", Some(s), Some(id)),
            EventPayload::PhotonLost(s, id) => ("photon_lost", Some(s), Some(id)),
            EventPayload::MessageDelivery(s, m) => (m.kind.as_str(), Some(s), Some(m.id)),
            EventPayload::TimeoutExpiry(s, id) => ("timeout_expiry", Some(s), Some(id)),
            EventPayload::EndOfRun => ("end_of_run", None, None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimEvent {
    pub at: SimTime,
    pub seq: u64,
    pub payload: EventPayload,
}

impl Ord for SimEvent {
    // Reversed so that the max-heap pops the earliest (at, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Priority queue ordered by `(at, seq)`, `seq` assigned on insertion.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<SimEvent>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, at: SimTime, payload: EventPayload) {
        self.heap.push(SimEvent { at, seq: self.next_seq, payload });
        self.next_seq += 1;
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Storage times and verification instants of a consumed pair mapped to the
/// idle time of each qubit. Both qubits are charged up to the later of the
/// two verifications.
pub fn verification_exposure(
    t_store_a: SimTime,
    t_store_b: SimTime,
    t_verify_a: SimTime,
    t_verify_b: SimTime,
) -> ExposureIntervals {
    assert!(
        t_verify_a >= t_store_a && t_verify_b >= t_store_b,
        "verification precedes storage: store ({t_store_a}, {t_store_b}) verify ({t_verify_a}, {t_verify_b})"
    );
    let t_pair = t_verify_a.max(t_verify_b);
    ExposureIntervals::new((t_pair - t_store_a).as_secs(), (t_pair - t_store_b).as_secs())
        .expect("non-negative exposure")
}

/// Sub-seed for an independent stream of the master seed.
fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

const LOSS_STREAM: u64 = 1;
const LATENCY_STREAM: u64 = 2;

/// Per-pair bookkeeping on both sides.
#[derive(Debug, Default, Clone, Copy)]
struct PairTrack {
    stored: [Option<SimTime>; 2],
    lost: [bool; 2],
    outcome: [Option<(QubitStatus, SimTime)>; 2],
}

impl PairTrack {
    fn side_done(&self, s: usize) -> bool {
        self.lost[s] || self.outcome[s].is_some()
    }

    fn done(&self) -> bool {
        self.side_done(0) && self.side_done(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PairClass {
    Verified,
    OneSided,
    Lost,
    Overflow,
    TimedOut,
    InFlight,
}

fn classify(track: &PairTrack) -> PairClass {
    let consumed = |s: usize| matches!(track.outcome[s], Some((QubitStatus::Consumed, _)));
    let overflow = |s: usize| matches!(track.outcome[s], Some((QubitStatus::DiscardedOverflow, _)));
    match (consumed(0), consumed(1)) {
        (true, true) => PairClass::Verified,
        (true, false) | (false, true) => PairClass::OneSided,
        _ if track.lost[0] || track.lost[1] => PairClass::Lost,
        _ if overflow(0) || overflow(1) => PairClass::Overflow,
        _ if track.done() => PairClass::TimedOut,
        _ => PairClass::InFlight,
    }
}

/// Time-weighted buffer occupancy over `[0, horizon]`.
#[derive(Debug, Clone, Copy)]
struct OccupancyIntegral {
    horizon: SimTime,
    last: SimTime,
    current: u32,
    area_ps: u128,
    max: u32,
}

impl OccupancyIntegral {
    fn new(horizon: SimTime) -> Self {
        OccupancyIntegral { horizon, last: SimTime::ZERO, current: 0, area_ps: 0, max: 0 }
    }

    fn advance(&mut self, now: SimTime) {
        let until = now.min(self.horizon);
        if until > self.last {
            self.area_ps += u128::from(self.current) * u128::from((until - self.last).0);
            self.last = until;
        }
    }

    fn set(&mut self, value: u32) {
        self.current = value;
        self.max = self.max.max(value);
    }

    fn mean(&self) -> f64 {
        if self.horizon.0 == 0 {
            return 0.0;
        }
        self.area_ps as f64 / self.horizon.0 as f64
    }
}

/// Optional trace sinks for a run.
#[derive(Default)]
pub struct TraceSinks<'a> {
    /// Every delivered control message.
    pub messages: Option<&'a mut dyn Write>,
    /// Every processed event.
    pub events: Option<&'a mut dyn Write>,
}

pub const EVENT_TRACE_HEADER: [&str; 5] = ["at", "seq", "event", "node", "id"];

struct Simulation<'a> {
    cfg: &'a RunConfig,
    node_names: [&'a str; 2],
    nodes: [NodeState; 2],
    queue: EventQueue,
    latency: LatencySampler,
    loss_rng: ChaCha8Rng,
    tracks: HashMap<u64, PairTrack>,
    occupancy: [OccupancyIntegral; 2],
    arm_delay: [SimTime; 2],
    n_pairs: u64,
    emitted: u64,
    outcomes: OutcomeCounts,
    fidelities: FidelityStats,
    delivered: MessageCounts,
    now: SimTime,
    message_trace: Option<MessageTraceWriter<&'a mut dyn Write>>,
    event_trace: Option<csv::Writer<&'a mut dyn Write>>,
}

impl<'a> Simulation<'a> {
    fn emission_time(&self, k: u64) -> SimTime {
        SimTime((k as f64 * 1e12 / self.cfg.source_rate_hz).round() as u64)
    }

    fn track(&mut self, id: EntanglementId) -> &mut PairTrack {
        self.tracks.entry(id.0).or_default()
    }

    fn finish_if_done(&mut self, id: EntanglementId) -> Result<()> {
        let Some(track) = self.tracks.get(&id.0).copied() else {
            return Ok(());
        };
        if !track.done() {
            return Ok(());
        }
        self.tracks.remove(&id.0);
        self.tally(id, &track)
    }

    fn tally(&mut self, id: EntanglementId, track: &PairTrack) -> Result<()> {
        match classify(track) {
            PairClass::Verified => {
                self.outcomes.verified += 1;
                let (Some(sa), Some(sb)) = (track.stored[0], track.stored[1]) else {
                    return Err(Error::Protocol(format!("pair {id} consumed without storage")));
                };
                let va = track.outcome[0].map(|o| o.1).expect("consumed");
                let vb = track.outcome[1].map(|o| o.1).expect("consumed");
                let exposure = verification_exposure(sa, sb, va, vb);
                let f = closed_form_fidelity(
                    exposure.tau_a_s,
                    exposure.tau_b_s,
                    &self.cfg.technology,
                    self.cfg.convention,
                )?;
                self.fidelities.record(f);
            }
            PairClass::OneSided => self.outcomes.one_sided += 1,
            PairClass::Lost => self.outcomes.lost += 1,
            PairClass::Overflow => self.outcomes.overflow += 1,
            PairClass::TimedOut => self.outcomes.timed_out += 1,
            PairClass::InFlight => self.outcomes.in_flight += 1,
        }
        Ok(())
    }

    fn apply(&mut self, side: Side, actions: Actions) -> Result<()> {
        for (id, at) in actions.timers {
            self.queue.push(at, EventPayload::TimeoutExpiry(side, id));
        }
        for msg in actions.messages {
            let delay = SimTime::from_secs(self.latency.delay_for(msg.id.0));
            self.queue.push(msg.sent_at + delay, EventPayload::MessageDelivery(side.partner(), msg));
        }
        let mut touched = Vec::with_capacity(actions.resolutions.len());
        for r in actions.resolutions {
            self.track(r.id).outcome[side.index()] = Some((r.status, r.at));
            touched.push(r.id);
        }
        for id in touched {
            self.finish_if_done(id)?;
        }
        let occ = self.nodes[side.index()].buffer_occupancy();
        self.occupancy[side.index()].set(occ);
        Ok(())
    }

    fn trace_event(&mut self, ev: &SimEvent) -> Result<()> {
        if let Some(w) = self.event_trace.as_mut() {
            let (kind, side, id) = ev.payload.label();
            let node = side.map_or("", |s| self.node_names[s.index()]);
            w.write_record([
                ev.at.to_string(),
                ev.seq.to_string(),
                kind.to_string(),
                node.to_string(),
                id.map_or(String::new(), |i| i.0.to_string()),
            ])?;
        }
        Ok(())
    }

    fn emit(&mut self, id: EntanglementId) {
        self.emitted += 1;
        let next = id.0 + 1;
        if next < self.n_pairs {
            self.queue.push(self.emission_time(next), EventPayload::EmitPair(EntanglementId(next)));
        }
        for side in [Side::A, Side::B] {
            let arm = &self.cfg.arms[side.index()];
            let survived = self.loss_rng.random::<f64>() < arm.survival;
            let at = self.now + self.arm_delay[side.index()];
            if survived {
                self.queue.push(at, EventPayload::PhotonArrival(side, id));
            } else if self.cfg.header_loss_detection {
                self.queue.push(at, EventPayload::PhotonLost(side, id));
            } else {
                self.track(id).lost[side.index()] = true;
            }
        }
        // Entries are created lazily; a pair lost on both arms without header
        // detection is already complete.
        if let Some(t) = self.tracks.get(&id.0) {
            if t.done() {
                let t = *t;
                self.tracks.remove(&id.0);
                self.outcomes.lost += 1;
                debug_assert_eq!(classify(&t), PairClass::Lost);
            }
        }
    }

    fn step(&mut self, ev: SimEvent) -> Result<()> {
        assert!(ev.at >= self.now, "event at {} dequeued after {}", ev.at, self.now);
        self.now = ev.at;
        for o in &mut self.occupancy {
            o.advance(ev.at);
        }
        self.trace_event(&ev)?;
        match ev.payload {
            EventPayload::EmitPair(id) => self.emit(id),
            EventPayload::PhotonArrival(side, id) => {
                self.track(id).stored[side.index()] = Some(ev.at);
                let actions = self.nodes[side.index()].on_photon_stored(id, ev.at)?;
                self.apply(side, actions)?;
            }
            EventPayload::PhotonLost(side, id) => {
                self.track(id).lost[side.index()] = true;
                let actions = self.nodes[side.index()].on_photon_lost(id, ev.at)?;
                self.apply(side, actions)?;
                self.finish_if_done(id)?;
            }
            EventPayload::MessageDelivery(side, msg) => {
                match msg.kind {
                    MessageKind::Announce => self.delivered.announce += 1,
                    MessageKind::DiscardNotify => self.delivered.discard_notify += 1,
                    MessageKind::GapDiscard => self.delivered.gap_discard += 1,
                }
                if let Some(w) = self.message_trace.as_mut() {
                    w.write(&msg, ev.at)?;
                }
                let node = &mut self.nodes[side.index()];
                let actions = match msg.kind {
                    MessageKind::Announce => node.on_announce_received(&msg, ev.at)?,
                    _ => node.on_discard_received(&msg, ev.at)?,
                };
                self.apply(side, actions)?;
            }
            EventPayload::TimeoutExpiry(side, id) => {
                let actions = self.nodes[side.index()].on_timeout(id, ev.at)?;
                self.apply(side, actions)?;
            }
            EventPayload::EndOfRun => {}
        }
        Ok(())
    }
}

/// Runs one simulation.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    run_with_traces(config, TraceSinks::default())
}

/// Runs one simulation, writing the requested traces as CSV.
pub fn run_with_traces<'a>(config: &'a RunConfig, sinks: TraceSinks<'a>) -> Result<RunReport> {
    config.validate()?;
    let timeout_s = config.timeout_s()?;
    let timeout = SimTime::from_secs(timeout_s);
    let duration = SimTime::from_secs(config.duration_s());
    let skew = config.arrival_skew_s();

    let mut protocol = ProtocolConfig::new(timeout);
    protocol.capacity = config.capacity;
    protocol.overflow = config.overflow;
    protocol.gap_guard = SimTime::from_secs(config.gap_guard_s.unwrap_or(skew));
    protocol.gap_batching = config.gap_batching;
    protocol.partner_deadline_check = config.partner_deadline_check;
    protocol.prune_horizon = SimTime::from_secs(config.prune_factor * timeout_s);

    let n_pairs = match config.stop {
        StopCondition::Pairs(n) => n,
        // Pairs whose emission instant falls strictly inside the window.
        StopCondition::DurationS(d) => (d * config.source_rate_hz).ceil() as u64,
    };

    let message_trace = match sinks.messages {
        Some(w) => Some(MessageTraceWriter::new(w, &config.arms[0].node, &config.arms[1].node)?),
        None => None,
    };
    let event_trace = match sinks.events {
        Some(w) => {
            let mut w = csv::Writer::from_writer(w);
            w.write_record(EVENT_TRACE_HEADER)?;
            Some(w)
        }
        None => None,
    };

    let mut sim = Simulation {
        cfg: config,
        node_names: [&config.arms[0].node, &config.arms[1].node],
        nodes: [NodeState::new(Side::A, protocol.clone()), NodeState::new(Side::B, protocol)],
        queue: EventQueue::default(),
        latency: LatencySampler::new(
            config.latency.clone(),
            config.direction_policy,
            derive_seed(config.seed, LATENCY_STREAM),
        )?,
        loss_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, LOSS_STREAM)),
        tracks: HashMap::new(),
        occupancy: [OccupancyIntegral::new(duration); 2],
        arm_delay: [
            SimTime::from_secs(config.arms[0].quantum_delay_s),
            SimTime::from_secs(config.arms[1].quantum_delay_s),
        ],
        n_pairs,
        emitted: 0,
        outcomes: OutcomeCounts::default(),
        fidelities: FidelityStats::new(config.histogram_bin_width),
        delivered: MessageCounts::default(),
        now: SimTime::ZERO,
        message_trace,
        event_trace,
    };

    if n_pairs > 0 {
        sim.queue.push(SimTime::ZERO, EventPayload::EmitPair(EntanglementId(0)));
    }
    sim.queue.push(duration, EventPayload::EndOfRun);

    let mut ended = false;
    while let Some(ev) = sim.queue.pop() {
        let is_end = ev.payload == EventPayload::EndOfRun;
        sim.step(ev)?;
        if is_end {
            ended = true;
            if !config.drain {
                break;
            }
        }
    }
    if !ended {
        return Err(Error::Config("event queue exhausted before the end of the run".into()));
    }
    for o in &mut sim.occupancy {
        o.advance(duration);
    }

    // Whatever is still tracked never completed.
    let mut open: Vec<(u64, PairTrack)> = sim.tracks.drain().collect();
    open.sort_by_key(|(id, _)| *id);
    for (id, track) in open {
        sim.tally(EntanglementId(id), &track)?;
    }
    let emitted = sim.emitted;
    if let Some(w) = sim.message_trace.take() {
        w.finish()?;
    }
    if let Some(mut w) = sim.event_trace.take() {
        w.flush()?;
    }

    let nodes: Vec<NodeReport> = (0..2)
        .map(|i| NodeReport {
            name: config.arms[i].node.clone(),
            counters: *sim.nodes[i].counters(),
            mean_occupancy: sim.occupancy[i].mean(),
            max_occupancy: sim.occupancy[i].max,
            consumed_ids_digest: digest(sim.nodes[i].consumed_ids()),
        })
        .collect();
    let mut consumed_a = sim.nodes[0].consumed_ids().to_vec();
    let mut consumed_b = sim.nodes[1].consumed_ids().to_vec();
    consumed_a.sort();
    consumed_b.sort();

    let mut sent = MessageCounts::default();
    for n in &nodes {
        sent.announce += n.counters.sent_announce;
        sent.discard_notify += n.counters.sent_discard_notify;
        sent.gap_discard += n.counters.sent_gap_discard;
    }
    let duration_s = duration.as_secs();
    let report = RunReport {
        seed: config.seed,
        duration_s,
        timeout_s,
        emitted,
        outcomes: sim.outcomes,
        verified_rate_hz: sim.outcomes.verified as f64 / duration_s,
        agreement: consumed_a == consumed_b,
        fidelity: sim.fidelities,
        messages_sent: sent,
        messages_delivered: sim.delivered,
        nodes,
        config: config.clone(),
    };
    if !report.conservation_holds() {
        return Err(Error::Protocol(format!("pair accounting does not balance: {:?}", report.outcomes)));
    }
    Ok(report)
}

/// Order-independent FNV-1a digest of a set of ids.
fn digest(ids: &[EntanglementId]) -> String {
    let mut sorted: Vec<u64> = ids.iter().map(|i| i.0).collect();
    sorted.sort_unstable();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for id in sorted {
        for b in id.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}
