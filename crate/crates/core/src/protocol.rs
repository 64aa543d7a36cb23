//! Per-node verification protocol.
//!
//! A node stores arriving photons in memory slots, announces each stored
//! entanglement id to its partner, and flags a qubit as verified once the
//! partner's announcement for the same id arrives. Verified pairs are
//! consumed immediately. Qubits are discarded on timeout (with a
//! notification to the partner), on a partner discard message, or when the
//! local photon for the id is known to be missing (gap inference).
//!
//! Handlers are transition functions: they mutate the node and return the
//! messages, timers and record resolutions the event loop must act on.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::SimTime;

/// Source-assigned sequence number shared by both photons of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntanglementId(pub u64);

impl fmt::Display for EntanglementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Which of the two entangling nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn partner(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QubitStatus {
    AwaitingPartner,
    Verified,
    Consumed,
    DiscardedTimeout,
    DiscardedGap,
    DiscardedNotified,
    DiscardedOverflow,
}

impl QubitStatus {
    pub fn is_live(self) -> bool {
        matches!(self, QubitStatus::AwaitingPartner | QubitStatus::Verified)
    }

    pub fn is_discarded(self) -> bool {
        matches!(
            self,
            QubitStatus::DiscardedTimeout
                | QubitStatus::DiscardedGap
                | QubitStatus::DiscardedNotified
                | QubitStatus::DiscardedOverflow
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QubitRecord {
    pub id: EntanglementId,
    pub stored_at: SimTime,
    pub deadline: SimTime,
    pub status: QubitStatus,
    /// Memory slot while the record is live.
    pub slot: Option<u32>,
    pub verified_at: Option<SimTime>,
    pub resolved_at: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Announce,
    DiscardNotify,
    GapDiscard,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Announce => "announce",
            MessageKind::DiscardNotify => "discard_notify",
            MessageKind::GapDiscard => "gap_discard",
        }
    }
}

impl FromStr for MessageKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "announce" => Ok(MessageKind::Announce),
            "discard_notify" => Ok(MessageKind::DiscardNotify),
            "gap_discard" => Ok(MessageKind::GapDiscard),
            other => Err(Error::Config(format!("unknown message kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlMessage {
    pub kind: MessageKind,
    pub id: EntanglementId,
    /// Number of consecutive ids covered, starting at `id`. Always 1 except
    /// for batched gap discards.
    pub span: u64,
    pub sender: Side,
    pub sent_at: SimTime,
}

impl ControlMessage {
    pub fn new(kind: MessageKind, id: EntanglementId, sender: Side, sent_at: SimTime) -> Self {
        ControlMessage { kind, id, span: 1, sender, sent_at }
    }

    pub fn ids(&self) -> impl Iterator<Item = EntanglementId> {
        (self.id.0..self.id.0 + self.span).map(EntanglementId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    /// The arriving photon is dropped and treated as locally lost.
    #[default]
    DropNewest,
    /// The oldest unverified qubit is evicted (with a discard notification)
    /// to make room.
    DropOldestUnverified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub timeout: SimTime,
    /// `None` means unbounded memory.
    pub capacity: Option<u32>,
    pub overflow: OverflowPolicy,
    /// Delay before a gap discard leaves the node.
    pub gap_guard: SimTime,
    /// Coalesce consecutive inferred gaps into one message.
    pub gap_batching: bool,
    /// Only verify when the partner is predicted to verify too, assuming the
    /// partner-to-here latency also applies in the other direction.
    pub partner_deadline_check: bool,
    /// Resolved bookkeeping is forgotten after this long.
    pub prune_horizon: SimTime,
}

impl ProtocolConfig {
    pub fn new(timeout: SimTime) -> Self {
        ProtocolConfig {
            timeout,
            capacity: None,
            overflow: OverflowPolicy::DropNewest,
            gap_guard: SimTime::ZERO,
            gap_batching: false,
            partner_deadline_check: true,
            prune_horizon: SimTime(timeout.0.saturating_mul(10)),
        }
    }
}

/// Memory slot allocator handing out the lowest free index.
#[derive(Debug, Clone)]
pub struct SlotAllocator {
    capacity: Option<u32>,
    free: BinaryHeap<Reverse<u32>>,
    next: u32,
    occupied: u32,
}

impl SlotAllocator {
    pub fn new(capacity: Option<u32>) -> Self {
        SlotAllocator { capacity, free: BinaryHeap::new(), next: 0, occupied: 0 }
    }

    pub fn allocate(&mut self) -> Option<u32> {
        let slot = if let Some(Reverse(s)) = self.free.pop() {
            s
        } else if self.capacity.is_none_or(|c| self.next < c) {
            self.next += 1;
            self.next - 1
        } else {
            return None;
        };
        self.occupied += 1;
        Some(slot)
    }

    pub fn release(&mut self, slot: u32) {
        self.occupied -= 1;
        self.free.push(Reverse(slot));
    }

    pub fn occupied(&self) -> u32 {
        self.occupied
    }

    pub fn capacity(&self) -> Option<u32> {
        self.capacity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeCounters {
    pub stored: u64,
    pub verified: u64,
    pub consumed: u64,
    pub discarded_timeout: u64,
    pub discarded_gap: u64,
    pub discarded_notified: u64,
    pub discarded_overflow: u64,
    /// Photons known missing locally, by header or by sequence gap.
    pub lost_local: u64,
    pub gaps_inferred: u64,
    pub overflow_events: u64,
    pub late_messages: u64,
    pub unmatched_announces: u64,
    pub partner_deadline_rejections: u64,
    /// Longest time any record stayed unresolved, in picoseconds.
    pub max_residence_ps: u64,
    pub sent_announce: u64,
    pub sent_discard_notify: u64,
    pub sent_gap_discard: u64,
    pub max_occupancy: u32,
}

/// A record reaching a terminal status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub id: EntanglementId,
    pub status: QubitStatus,
    pub at: SimTime,
}

/// What the event loop must do after a transition.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Actions {
    pub messages: Vec<ControlMessage>,
    pub timers: Vec<(EntanglementId, SimTime)>,
    pub resolutions: Vec<Resolution>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PruneKind {
    Record,
    Pending,
    Tombstone,
    Lost,
}

#[derive(Debug, Clone, Copy)]
struct PendingAnnounce {
    partner_stored_at: SimTime,
    received_at: SimTime,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    side: Side,
    config: ProtocolConfig,
    records: HashMap<EntanglementId, QubitRecord>,
    awaiting: BTreeSet<EntanglementId>,
    pending: HashMap<EntanglementId, PendingAnnounce>,
    tombstones: HashMap<EntanglementId, QubitStatus>,
    lost_local: HashSet<EntanglementId>,
    prune_queue: VecDeque<(SimTime, EntanglementId, PruneKind)>,
    highest_id_seen: Option<EntanglementId>,
    slots: SlotAllocator,
    counters: NodeCounters,
    consumed: Vec<EntanglementId>,
}

impl NodeState {
    pub fn new(side: Side, config: ProtocolConfig) -> Self {
        let slots = SlotAllocator::new(config.capacity);
        NodeState {
            side,
            config,
            records: HashMap::new(),
            awaiting: BTreeSet::new(),
            pending: HashMap::new(),
            tombstones: HashMap::new(),
            lost_local: HashSet::new(),
            prune_queue: VecDeque::new(),
            highest_id_seen: None,
            slots,
            counters: NodeCounters::default(),
            consumed: Vec::new(),
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn counters(&self) -> &NodeCounters {
        &self.counters
    }

    pub fn record(&self, id: EntanglementId) -> Option<&QubitRecord> {
        self.records.get(&id)
    }

    pub fn has_pending_announce(&self, id: EntanglementId) -> bool {
        self.pending.contains_key(&id)
    }

    pub fn has_tombstone(&self, id: EntanglementId) -> bool {
        self.tombstones.contains_key(&id)
    }

    pub fn highest_id_seen(&self) -> Option<EntanglementId> {
        self.highest_id_seen
    }

    /// Ids consumed at this node, in consumption order.
    pub fn consumed_ids(&self) -> &[EntanglementId] {
        &self.consumed
    }

    pub fn live_records(&self) -> impl Iterator<Item = &QubitRecord> {
        self.records.values().filter(|r| r.status.is_live())
    }

    pub fn buffer_occupancy(&self) -> u32 {
        self.slots.occupied()
    }

    fn schedule_prune(&mut self, now: SimTime, id: EntanglementId, kind: PruneKind) {
        self.prune_queue.push_back((now + self.config.prune_horizon, id, kind));
    }

    fn prune(&mut self, now: SimTime) {
        while let Some(&(expiry, id, kind)) = self.prune_queue.front() {
            if expiry > now {
                break;
            }
            self.prune_queue.pop_front();
            match kind {
                PruneKind::Record => {
                    if self.records.get(&id).is_some_and(|r| !r.status.is_live()) {
                        self.records.remove(&id);
                    }
                }
                PruneKind::Pending => {
                    self.pending.remove(&id);
                }
                PruneKind::Tombstone => {
                    self.tombstones.remove(&id);
                }
                PruneKind::Lost => {
                    self.lost_local.remove(&id);
                }
            }
        }
    }

    fn send(&mut self, out: &mut Actions, kind: MessageKind, id: EntanglementId, span: u64, sent_at: SimTime) {
        match kind {
            MessageKind::Announce => self.counters.sent_announce += 1,
            MessageKind::DiscardNotify => self.counters.sent_discard_notify += 1,
            MessageKind::GapDiscard => self.counters.sent_gap_discard += 1,
        }
        out.messages.push(ControlMessage { kind, id, span, sender: self.side, sent_at });
    }

    /// Moves a live record to a terminal status and frees its slot.
    fn resolve(&mut self, id: EntanglementId, status: QubitStatus, now: SimTime, out: &mut Actions) {
        let rec = self.records.get_mut(&id).expect("resolving a known record");
        debug_assert!(rec.status.is_live());
        rec.status = status;
        rec.resolved_at = Some(now);
        let residence = (now - rec.stored_at).0;
        if let Some(slot) = rec.slot.take() {
            self.slots.release(slot);
        }
        self.awaiting.remove(&id);
        self.counters.max_residence_ps = self.counters.max_residence_ps.max(residence);
        match status {
            QubitStatus::Consumed => {
                self.counters.consumed += 1;
                self.consumed.push(id);
            }
            QubitStatus::DiscardedTimeout => self.counters.discarded_timeout += 1,
            QubitStatus::DiscardedGap => self.counters.discarded_gap += 1,
            QubitStatus::DiscardedNotified => self.counters.discarded_notified += 1,
            QubitStatus::DiscardedOverflow => self.counters.discarded_overflow += 1,
            QubitStatus::AwaitingPartner | QubitStatus::Verified => unreachable!("not terminal"),
        }
        out.resolutions.push(Resolution { id, status, at: now });
        self.schedule_prune(now, id, PruneKind::Record);
    }

    /// Records an id whose photon never reached this node and tells the partner.
    fn mark_lost(&mut self, id: EntanglementId, now: SimTime) -> bool {
        if !self.lost_local.insert(id) {
            return false;
        }
        self.counters.lost_local += 1;
        self.pending.remove(&id);
        self.schedule_prune(now, id, PruneKind::Lost);
        true
    }

    /// Advances the sequence high-water mark, declaring skipped ids lost.
    fn observe_sequence(&mut self, id: EntanglementId, now: SimTime, out: &mut Actions) {
        let next_expected = self.highest_id_seen.map_or(0, |h| h.0 + 1);
        if id.0 > next_expected {
            let gap: Vec<EntanglementId> = (next_expected..id.0)
                .map(EntanglementId)
                .filter(|g| !self.records.contains_key(g) && !self.lost_local.contains(g))
                .collect();
            let sent_at = now + self.config.gap_guard;
            for &g in &gap {
                self.mark_lost(g, now);
                self.counters.gaps_inferred += 1;
            }
            if self.config.gap_batching {
                for run in contiguous_runs(&gap) {
                    self.send(out, MessageKind::GapDiscard, run.0, run.1, sent_at);
                }
            } else {
                for g in gap {
                    self.send(out, MessageKind::GapDiscard, g, 1, sent_at);
                }
            }
        }
        if self.highest_id_seen.is_none_or(|h| id > h) {
            self.highest_id_seen = Some(id);
        }
    }

    /// Would the partner, which stored its qubit at `partner_stored_at`,
    /// receive our announcement (sent at `our_stored_at`) before its own
    /// deadline, if the latency it took to reach us applies both ways?
    fn partner_will_verify(
        &self,
        our_stored_at: SimTime,
        partner_stored_at: SimTime,
        observed_latency: SimTime,
    ) -> bool {
        !self.config.partner_deadline_check
            || our_stored_at + observed_latency < partner_stored_at + self.config.timeout
    }

    fn try_verify(&mut self, id: EntanglementId, ann: PendingAnnounce, now: SimTime, out: &mut Actions) -> bool {
        let rec = &self.records[&id];
        if rec.status != QubitStatus::AwaitingPartner || now >= rec.deadline {
            return false;
        }
        let latency = ann.received_at.saturating_sub(ann.partner_stored_at);
        if !self.partner_will_verify(rec.stored_at, ann.partner_stored_at, latency) {
            self.counters.partner_deadline_rejections += 1;
            return false;
        }
        let rec = self.records.get_mut(&id).expect("present");
        rec.status = QubitStatus::Verified;
        rec.verified_at = Some(now);
        self.counters.verified += 1;
        // Verified pairs go straight to the application.
        self.resolve(id, QubitStatus::Consumed, now, out);
        true
    }

    /// A photon for `id` arrived and was swapped into memory.
    pub fn on_photon_stored(&mut self, id: EntanglementId, now: SimTime) -> Result<Actions> {
        self.prune(now);
        let mut out = Actions::default();
        if self.records.contains_key(&id) {
            return Err(Error::Protocol(format!("duplicate storage of id {id} at node {:?}", self.side)));
        }
        self.observe_sequence(id, now, &mut out);

        // Partner already gave up on this id, or we had declared it lost.
        let doomed =
            self.tombstones.remove(&id).or_else(|| self.lost_local.contains(&id).then_some(QubitStatus::DiscardedGap));
        if let Some(status) = doomed {
            self.counters.stored += 1;
            self.records.insert(id, self.new_record(id, now, None));
            self.resolve(id, status, now, &mut out);
            return Ok(out);
        }

        let slot = match self.slots.allocate() {
            Some(s) => Some(s),
            None => {
                self.counters.overflow_events += 1;
                match self.config.overflow {
                    OverflowPolicy::DropOldestUnverified if !self.awaiting.is_empty() => {
                        let victim = *self.awaiting.iter().next().expect("non-empty");
                        self.resolve(victim, QubitStatus::DiscardedOverflow, now, &mut out);
                        self.send(&mut out, MessageKind::DiscardNotify, victim, 1, now);
                        self.slots.allocate()
                    }
                    _ => None,
                }
            }
        };
        let Some(slot) = slot else {
            // Dropped on arrival: the pair is unusable, so treat it as a local loss.
            self.records.insert(id, self.new_record(id, now, None));
            self.resolve(id, QubitStatus::DiscardedOverflow, now, &mut out);
            self.mark_lost(id, now);
            self.send(&mut out, MessageKind::GapDiscard, id, 1, now + self.config.gap_guard);
            return Ok(out);
        };

        self.counters.stored += 1;
        let rec = self.new_record(id, now, Some(slot));
        out.timers.push((id, rec.deadline));
        self.records.insert(id, rec);
        self.awaiting.insert(id);
        self.counters.max_occupancy = self.counters.max_occupancy.max(self.slots.occupied());
        self.send(&mut out, MessageKind::Announce, id, 1, now);
        if let Some(ann) = self.pending.remove(&id) {
            self.try_verify(id, ann, now, &mut out);
        }
        Ok(out)
    }

    fn new_record(&self, id: EntanglementId, now: SimTime, slot: Option<u32>) -> QubitRecord {
        QubitRecord {
            id,
            stored_at: now,
            deadline: now + self.config.timeout,
            status: QubitStatus::AwaitingPartner,
            slot,
            verified_at: None,
            resolved_at: None,
        }
    }

    /// The header for `id` arrived without its photon.
    pub fn on_photon_lost(&mut self, id: EntanglementId, now: SimTime) -> Result<Actions> {
        self.prune(now);
        let mut out = Actions::default();
        if self.records.contains_key(&id) {
            return Err(Error::Protocol(format!("loss reported for stored id {id} at node {:?}", self.side)));
        }
        self.observe_sequence(id, now, &mut out);
        self.tombstones.remove(&id);
        if self.mark_lost(id, now) {
            self.send(&mut out, MessageKind::GapDiscard, id, 1, now + self.config.gap_guard);
        }
        Ok(out)
    }

    pub fn on_announce_received(&mut self, msg: &ControlMessage, now: SimTime) -> Result<Actions> {
        self.prune(now);
        if msg.kind != MessageKind::Announce {
            return Err(Error::Protocol(format!("expected announce, got {}", msg.kind.as_str())));
        }
        let mut out = Actions::default();
        let ann = PendingAnnounce { partner_stored_at: msg.sent_at, received_at: now };
        match self.records.get(&msg.id).map(|r| r.status) {
            Some(QubitStatus::AwaitingPartner) => {
                self.try_verify(msg.id, ann, now, &mut out);
            }
            Some(_) => self.counters.late_messages += 1,
            None if self.lost_local.contains(&msg.id) => self.counters.unmatched_announces += 1,
            None => {
                if self.pending.insert(msg.id, ann).is_none() {
                    self.schedule_prune(now, msg.id, PruneKind::Pending);
                }
            }
        }
        Ok(out)
    }

    pub fn on_timeout(&mut self, id: EntanglementId, now: SimTime) -> Result<Actions> {
        self.prune(now);
        let mut out = Actions::default();
        let Some(rec) = self.records.get(&id) else {
            return Ok(out);
        };
        if rec.status != QubitStatus::AwaitingPartner {
            return Ok(out);
        }
        if now < rec.deadline {
            return Err(Error::Protocol(format!("timeout for id {id} fired before its deadline")));
        }
        self.resolve(id, QubitStatus::DiscardedTimeout, now, &mut out);
        self.send(&mut out, MessageKind::DiscardNotify, id, 1, now);
        Ok(out)
    }

    pub fn on_discard_received(&mut self, msg: &ControlMessage, now: SimTime) -> Result<Actions> {
        self.prune(now);
        let status = match msg.kind {
            MessageKind::DiscardNotify => QubitStatus::DiscardedNotified,
            MessageKind::GapDiscard => QubitStatus::DiscardedGap,
            MessageKind::Announce => {
                return Err(Error::Protocol("announce delivered to the discard handler".into()));
            }
        };
        let mut out = Actions::default();
        for id in msg.ids() {
            match self.records.get(&id).map(|r| r.status) {
                Some(QubitStatus::AwaitingPartner) => self.resolve(id, status, now, &mut out),
                Some(_) => {}
                None if self.lost_local.contains(&id) => {}
                None => {
                    self.pending.remove(&id);
                    if self.tombstones.insert(id, status).is_none() {
                        self.schedule_prune(now, id, PruneKind::Tombstone);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn contiguous_runs(ids: &[EntanglementId]) -> Vec<(EntanglementId, u64)> {
    let mut runs: Vec<(EntanglementId, u64)> = Vec::new();
    for &id in ids {
        match runs.last_mut() {
            Some((start, len)) if start.0 + *len == id.0 => *len += 1,
            _ => runs.push((id, 1)),
        }
    }
    runs
}

pub fn buffer_occupancy(node: &NodeState) -> u32 {
    node.buffer_occupancy()
}

/// One delivered control message in the exported trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageTraceRow {
    pub kind: String,
    pub id: u64,
    pub sender: String,
    pub sent_at: String,
    pub delivered_at: String,
    pub span: u64,
}

/// Header of the message trace CSV. The first five columns are fixed; `span`
/// is 1 unless gap batching is enabled.
pub const MESSAGE_TRACE_HEADER: [&str; 6] = ["kind", "id", "sender", "sent_at", "delivered_at", "span"];

pub struct MessageTraceWriter<W: Write> {
    inner: csv::Writer<W>,
    names: [String; 2],
}

impl<W: Write> MessageTraceWriter<W> {
    pub fn new(out: W, node_a: &str, node_b: &str) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(MESSAGE_TRACE_HEADER)?;
        Ok(MessageTraceWriter { inner, names: [node_a.to_string(), node_b.to_string()] })
    }

    pub fn write(&mut self, msg: &ControlMessage, delivered_at: SimTime) -> Result<()> {
        self.inner.write_record([
            msg.kind.as_str(),
            &msg.id.0.to_string(),
            &self.names[msg.sender.index()],
            &msg.sent_at.to_string(),
            &delivered_at.to_string(),
            &msg.span.to_string(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

pub fn read_message_trace<R: Read>(input: R) -> Result<Vec<MessageTraceRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(MESSAGE_TRACE_HEADER) {
        return Err(Error::Config(format!("unexpected message trace header {headers:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
