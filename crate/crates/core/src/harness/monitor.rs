//! Streaming measurement of a run from the outside: leader timelines, message
//! counts and sizes, and the log-level checks of the protocols' guarantees.
//!
//! The monitor only sees what the engine reports to observers, so replaying
//! a saved [`EventLog`] through it gives exactly the same verdicts as running
//! it live.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{known_encoded_len, Label, ProcessId, SimTime, WireMessage};
use crate::sim::{DeliveryOutcome, EventLog, Observer, Protocol, TimerKey};

/// Cap on the recorded leader-change timeline and on repeated violations of
/// one kind.
const TIMELINE_CAP: usize = 10_000;
const VIOLATION_CAP: usize = 16;

/// What the checks need to know about a run beforehand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleContext {
    pub n: u32,
    pub protocol: Protocol,
    pub horizon: SimTime,
    /// Processes that never crash.
    pub correct: BTreeSet<ProcessId>,
    /// Process whose loss of leadership is timed for re-election runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub victim: Option<ProcessId>,
}

impl OracleContext {
    pub fn expected_leader(&self) -> Option<ProcessId> {
        self.correct.first().copied()
    }

    /// Largest admissible encoded size, in bytes, of a message that carries
    /// no pending pairs.
    fn size_bound(&self, message: &WireMessage) -> usize {
        let base = known_encoded_len(self.n);
        match message {
            WireMessage::Known(_) => base,
            WireMessage::Unknown(m) => base + 1 + m.seq.map_or(0, varint_len),
        }
    }
}

fn varint_len(v: u64) -> usize {
    ((64 - v.leading_zeros()).max(1) as usize).div_ceil(7)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// A message naming a crashed leader reached a correct process during
    /// the last quarter of the post-crash period.
    CrashedLeaderDelivered { time: SimTime, to: ProcessId, leader: ProcessId },
    /// A correct process sent a message naming another leader after
    /// convergence.
    ImpureSend { time: SimTime, from: ProcessId, leader: ProcessId },
    MessageTooLarge { time: SimTime, from: ProcessId, to: ProcessId, bytes: usize, bound: usize },
    /// Two correct processes ended with different known sets.
    KnownSetsDiffer { a: ProcessId, b: ProcessId },
    Undiscovered { process: ProcessId, missing: ProcessId },
    /// Pending pairs still flowed between correct neighbors during the last
    /// quarter of the run.
    PendingNotQuiescent { from: ProcessId, to: ProcessId, last_nonempty: SimTime },
    WrongLeader { process: ProcessId, leader: ProcessId, expected: ProcessId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderChange {
    pub time: SimTime,
    pub process: ProcessId,
    pub leader: ProcessId,
}

/// Observer that keeps the external view of a run.
#[derive(Clone, Debug)]
pub struct RunMonitor {
    ctx: OracleContext,
    crash_time: Vec<Option<SimTime>>,
    last_crash: Option<SimTime>,
    leader: Vec<ProcessId>,
    last_change: Vec<Option<SimTime>>,
    // Leader and last change as they stood before the current instant.
    instant_start: Vec<Option<(SimTime, ProcessId, Option<SimTime>)>>,
    left_victim: Vec<Option<SimTime>>,
    timeline: Vec<LeaderChange>,
    timeline_truncated: bool,
    sends: u64,
    deliveries: u64,
    max_bytes: usize,
    max_bytes_quiescent: Option<usize>,
    oversize: Vec<Violation>,
    last_impure_send: Option<(SimTime, ProcessId, ProcessId)>,
    last_crashed_delivery: Option<(SimTime, ProcessId, ProcessId)>,
    last_nonempty_pending: BTreeMap<(ProcessId, ProcessId), SimTime>,
    learned: Vec<BTreeSet<ProcessId>>,
    is_correct: Vec<bool>,
    disagreeing: usize,
    first_agreement: Option<SimTime>,
}

impl RunMonitor {
    pub fn new(ctx: OracleContext) -> Self {
        let n = ctx.n as usize;
        let ids: Vec<ProcessId> = (0..n).map(ProcessId::from_index).collect();
        let mut is_correct = vec![false; n];
        for p in &ctx.correct {
            is_correct[p.index()] = true;
        }
        let expected = ctx.expected_leader();
        let disagreeing = ctx.correct.iter().filter(|&&p| Some(p) != expected).count();
        Self {
            crash_time: vec![None; n],
            last_crash: None,
            leader: ids.clone(),
            last_change: vec![None; n],
            instant_start: vec![None; n],
            left_victim: vec![None; n],
            timeline: Vec::new(),
            timeline_truncated: false,
            sends: 0,
            deliveries: 0,
            max_bytes: 0,
            max_bytes_quiescent: None,
            oversize: Vec::new(),
            last_impure_send: None,
            last_crashed_delivery: None,
            last_nonempty_pending: BTreeMap::new(),
            learned: ids.iter().map(|&p| BTreeSet::from([p])).collect(),
            is_correct,
            disagreeing,
            first_agreement: (disagreeing == 0 && expected.is_some()).then_some(SimTime::ZERO),
            ctx,
        }
    }

    pub fn context(&self) -> &OracleContext {
        &self.ctx
    }

    pub fn sends(&self) -> u64 {
        self.sends
    }

    pub fn deliveries(&self) -> u64 {
        self.deliveries
    }

    pub fn leader(&self, p: ProcessId) -> ProcessId {
        self.leader[p.index()]
    }

    pub fn timeline(&self) -> &[LeaderChange] {
        &self.timeline
    }

    pub fn timeline_truncated(&self) -> bool {
        self.timeline_truncated
    }

    /// Largest encoded message, in bits.
    pub fn max_message_bits(&self) -> u64 {
        self.max_bytes as u64 * 8
    }

    /// Largest encoded message, in bits, among those whose size the protocol
    /// bounds: every message for known membership, pending-free messages
    /// between correct processes for unknown membership.
    pub fn bounded_message_bits(&self) -> Option<u64> {
        match self.ctx.protocol {
            Protocol::Known { .. } => (self.sends > 0).then(|| self.max_message_bits()),
            Protocol::Unknown { .. } => self.max_bytes_quiescent.map(|b| b as u64 * 8),
        }
    }

    /// Names a process has seen announced, plus its own.
    pub fn learned(&self, p: ProcessId) -> &BTreeSet<ProcessId> {
        &self.learned[p.index()]
    }

    /// Last time a pending pair was sent between two correct processes.
    pub fn pending_quiescence_time(&self) -> Option<SimTime> {
        self.last_nonempty_pending.values().max().copied()
    }

    /// Start of the stable suffix in which every correct process has the
    /// smallest correct id as leader; `None` if some correct process ends
    /// with another leader. A process's leader at time `t` is its value after
    /// all events at `t`, so a change undone at the same instant is ignored.
    pub fn convergence_time(&self) -> Option<SimTime> {
        let expected = self.ctx.expected_leader()?;
        let mut t = SimTime::ZERO;
        for &p in &self.ctx.correct {
            if self.leader[p.index()] != expected {
                return None;
            }
            t = t.max(self.last_change[p.index()].unwrap_or(SimTime::ZERO));
        }
        Some(t)
    }

    /// First instant at which every correct process had the smallest correct
    /// id as leader, whether or not that agreement lasted.
    pub fn first_agreement_time(&self) -> Option<SimTime> {
        self.first_agreement
    }

    /// Per correct process, the time from which its leader was no longer the
    /// victim; `None` for a process still trusting the victim at the end.
    pub fn discard_times(&self) -> Vec<(ProcessId, Option<SimTime>)> {
        let Some(victim) = self.ctx.victim else {
            return Vec::new();
        };
        self.ctx
            .correct
            .iter()
            .map(|&p| {
                let t = if self.leader[p.index()] == victim {
                    None
                } else {
                    Some(self.left_victim[p.index()].unwrap_or(SimTime::ZERO))
                };
                (p, t)
            })
            .collect()
    }

    /// Start of the window in which crashed leaders must have vanished: the
    /// last quarter of the time after the last crash.
    fn crash_window_start(&self) -> Option<SimTime> {
        let c = self.last_crash?;
        let span = self.ctx.horizon.0.saturating_sub(c.0);
        Some(SimTime(c.0 + span - span / 4))
    }

    fn final_quarter_start(&self) -> SimTime {
        let h = self.ctx.horizon.0;
        SimTime(h - h / 4)
    }

    fn is_correct(&self, p: ProcessId) -> bool {
        self.ctx.correct.contains(&p)
    }

    /// Every check that applies to the protocol, in a stable order.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if let (Some((time, to, leader)), Some(start)) =
            (self.last_crashed_delivery, self.crash_window_start())
        {
            if time >= start {
                out.push(Violation::CrashedLeaderDelivered { time, to, leader });
            }
        }
        let convergence = self.convergence_time();
        if let (Some((time, from, leader)), Some(c)) = (self.last_impure_send, convergence) {
            if time > c {
                out.push(Violation::ImpureSend { time, from, leader });
            }
        }
        out.extend(self.oversize.iter().cloned());
        if let Some(expected) = self.ctx.expected_leader() {
            for &p in &self.ctx.correct {
                let leader = self.leader[p.index()];
                if leader != expected {
                    out.push(Violation::WrongLeader { process: p, leader, expected });
                }
            }
        }
        if matches!(self.ctx.protocol, Protocol::Unknown { .. }) {
            let quiet_from = self.final_quarter_start();
            for (&(from, to), &last_nonempty) in &self.last_nonempty_pending {
                if last_nonempty >= quiet_from {
                    out.push(Violation::PendingNotQuiescent { from, to, last_nonempty });
                }
            }
            let mut correct = self.ctx.correct.iter();
            if let Some(&first) = correct.next() {
                let reference = &self.learned[first.index()];
                for &q in &self.ctx.correct {
                    if let Some(&missing) = self.ctx.correct.difference(&self.learned[q.index()]).next() {
                        out.push(Violation::Undiscovered { process: q, missing });
                    }
                }
                for &q in correct {
                    if &self.learned[q.index()] != reference {
                        out.push(Violation::KnownSetsDiffer { a: first, b: q });
                    }
                }
            }
        }
        out
    }
}

impl Observer for RunMonitor {
    fn send(&mut self, time: SimTime, from: ProcessId, to: ProcessId, message: &WireMessage, _: DeliveryOutcome) {
        self.sends += 1;
        let bytes = message.encoded_len(self.ctx.n);
        self.max_bytes = self.max_bytes.max(bytes);
        let from_correct = self.is_correct(from);
        if let (Some(leader), Some(expected)) = (message.leader(), self.ctx.expected_leader()) {
            if from_correct && leader != expected {
                self.last_impure_send = Some((time, from, leader));
            }
        }
        let bounded = match message {
            WireMessage::Known(_) => true,
            WireMessage::Unknown(m) => {
                let between_correct = from_correct && self.is_correct(to);
                if between_correct && !m.pending.is_empty() {
                    self.last_nonempty_pending.insert((from, to), time);
                }
                if between_correct && m.pending.is_empty() {
                    self.max_bytes_quiescent = Some(self.max_bytes_quiescent.unwrap_or(0).max(bytes));
                    true
                } else {
                    false
                }
            }
        };
        if bounded {
            let bound = self.ctx.size_bound(message);
            if bytes > bound && self.oversize.len() < VIOLATION_CAP {
                self.oversize.push(Violation::MessageTooLarge { time, from, to, bytes, bound });
            }
        }
    }

    fn deliver(&mut self, time: SimTime, _sent_at: SimTime, _from: ProcessId, to: ProcessId, message: &WireMessage) {
        self.deliveries += 1;
        if let Some(leader) = message.leader() {
            let leader_crashed = self.crash_time[leader.index()].is_some_and(|c| c <= time);
            if leader_crashed && self.is_correct(to) {
                self.last_crashed_delivery = Some((time, to, leader));
            }
        }
        if let WireMessage::Unknown(m) = message {
            let learned = &mut self.learned[to.index()];
            for &(label, k) in &m.pending {
                if label == Label::New {
                    learned.insert(k);
                }
            }
        }
    }

    fn timer(&mut self, _: SimTime, _: ProcessId, _: TimerKey, _: bool) {}

    fn crash(&mut self, time: SimTime, process: ProcessId) {
        self.crash_time[process.index()] = Some(time);
        self.last_crash = Some(self.last_crash.map_or(time, |t| t.max(time)));
    }

    fn leader_change(&mut self, time: SimTime, process: ProcessId, leader: ProcessId) {
        let i = process.index();
        if Some(self.leader[i]) == self.ctx.victim && Some(leader) != self.ctx.victim {
            self.left_victim[i] = Some(time);
        }
        match self.instant_start[i] {
            Some((t, before, last)) if t == time => {
                // Undone within the same instant: not a change.
                self.last_change[i] = if leader == before { last } else { Some(time) };
            }
            _ => {
                self.instant_start[i] = Some((time, self.leader[i], self.last_change[i]));
                self.last_change[i] = Some(time);
            }
        }
        if self.is_correct[i] {
            let expected = self.ctx.expected_leader();
            match (self.leader[i] == leader, Some(leader) == expected) {
                (true, _) => {}
                (false, true) => self.disagreeing -= 1,
                (false, false) if Some(self.leader[i]) == expected => self.disagreeing += 1,
                (false, false) => {}
            }
            if self.disagreeing == 0 && self.first_agreement.is_none() {
                self.first_agreement = Some(time);
            }
        }
        self.leader[i] = leader;
        if self.timeline.len() < TIMELINE_CAP {
            self.timeline.push(LeaderChange { time, process, leader });
        } else {
            self.timeline_truncated = true;
        }
    }
}

/// Replays `log` and returns every violated check.
pub fn check_oracles(log: &EventLog, ctx: &OracleContext) -> Vec<Violation> {
    let mut monitor = RunMonitor::new(ctx.clone());
    log.replay(&mut monitor);
    monitor.violations()
}

/// Convergence time of a logged run: see [`RunMonitor::convergence_time`].
pub fn measure_convergence(log: &EventLog, ctx: &OracleContext) -> Option<SimTime> {
    let mut monitor = RunMonitor::new(ctx.clone());
    log.replay(&mut monitor);
    monitor.convergence_time()
}
