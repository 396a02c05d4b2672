//! Eventual leader election with unknown membership.
//!
//! A process starts out knowing only itself and its channels. Names spread
//! through per-channel pending sets: `(New, k)` announces `k` to the neighbor
//! behind a channel until that neighbor answers `(Ack, k)`, and the
//! acknowledgement is withdrawn once the announcement stops arriving. The own
//! hopbound entry counts known names. Leader handling keeps a single timer per
//! candidate and the largest hopbound heard while the timer runs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{AliveUnknown, Duration, Label, PendingSet, ProcessId, SimTime};
use crate::sim::{TimerArm, TimerKey};
use crate::timer::Timer;

const INITIAL_TIMEOUT: u64 = 1;

/// Local name of one of a process's channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Monitor {
    timeout: u64,
    timer: Timer,
}

impl Monitor {
    /// Entry for a candidate heard of before its name arrived: treated as a
    /// timer that already ran out.
    fn lapsed() -> Self {
        Self { timeout: INITIAL_TIMEOUT, timer: Timer::armed_until(SimTime::ZERO) }
    }
}

#[derive(Clone, Debug)]
pub struct UnknownState {
    id: ProcessId,
    leader: ProcessId,
    known: BTreeSet<ProcessId>,
    hopbound: BTreeMap<ProcessId, u32>,
    monitors: BTreeMap<ProcessId, Monitor>,
    neighbor_of: Vec<Option<ProcessId>>,
    pending: Vec<PendingSet>,
    staleness_guard: bool,
    next_seq: u64,
    last_seq: Vec<Option<u64>>,
}

impl UnknownState {
    pub fn new(id: ProcessId, channels: usize) -> Self {
        let announce: PendingSet = [(Label::New, id)].into_iter().collect();
        Self {
            id,
            leader: id,
            known: [id].into_iter().collect(),
            hopbound: [(id, 1)].into_iter().collect(),
            monitors: BTreeMap::new(),
            neighbor_of: vec![None; channels],
            pending: vec![announce; channels],
            staleness_guard: false,
            next_seq: 0,
            last_seq: vec![None; channels],
        }
    }

    /// Stamps outgoing messages with a per-sender sequence number and drops
    /// incoming messages older than the newest one seen on their channel.
    pub fn with_staleness_guard(mut self, enabled: bool) -> Self {
        self.staleness_guard = enabled;
        self
    }

    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn leader(&self) -> ProcessId {
        self.leader
    }

    pub fn known(&self) -> &BTreeSet<ProcessId> {
        &self.known
    }

    pub fn hopbound(&self, j: ProcessId) -> u32 {
        self.hopbound.get(&j).copied().unwrap_or(0)
    }

    pub fn timeout(&self, j: ProcessId) -> Option<Duration> {
        self.monitors.get(&j).map(|m| Duration(m.timeout))
    }

    pub fn timer(&self, j: ProcessId) -> Option<Timer> {
        self.monitors.get(&j).map(|m| m.timer)
    }

    pub fn channels(&self) -> usize {
        self.pending.len()
    }

    pub fn pending(&self, m: ChannelId) -> &PendingSet {
        &self.pending[m.0]
    }

    pub fn neighbor_of(&self, m: ChannelId) -> Option<ProcessId> {
        self.neighbor_of[m.0]
    }

    /// One message per channel: the leader pair while the leader's hopbound
    /// exceeds one, `⊥` otherwise, always with the channel's pending set.
    pub fn on_tick(&mut self) -> Vec<(ChannelId, AliveUnknown)> {
        let seq = self.staleness_guard.then(|| {
            self.next_seq += 1;
            self.next_seq
        });
        let hb = self.hopbound(self.leader);
        let leader = (hb > 1).then_some((self.leader, hb - 1));
        self.pending
            .iter()
            .enumerate()
            .map(|(m, pending)| {
                (ChannelId(m), AliveUnknown { leader, pending: pending.clone(), seq })
            })
            .collect()
    }

    /// Handles `msg` arriving on channel `m` from `sender`. Returns the timers
    /// to schedule.
    pub fn on_receive(
        &mut self,
        now: SimTime,
        m: ChannelId,
        sender: ProcessId,
        msg: &AliveUnknown,
    ) -> Vec<TimerArm> {
        if self.staleness_guard {
            if let Some(seq) = msg.seq {
                if self.last_seq[m.0].is_some_and(|last| last >= seq) {
                    return Vec::new();
                }
                self.last_seq[m.0] = Some(seq);
            }
        }
        self.neighbor_of[m.0].get_or_insert(sender);
        let mut arms = self.merge_pending(now, m, &msg.pending);
        if let Some((leader, hb)) = msg.leader {
            arms.extend(self.consider_leader(now, leader, hb));
        }
        arms
    }

    fn merge_pending(&mut self, now: SimTime, m: ChannelId, incoming: &PendingSet) -> Vec<TimerArm> {
        let mut arms = Vec::new();
        let mut announced = BTreeSet::new();
        for &(label, k) in incoming {
            match label {
                Label::New => {
                    announced.insert(k);
                    if self.known.insert(k) {
                        *self.hopbound.get_mut(&self.id).expect("own entry") += 1;
                        self.hopbound.entry(k).or_insert(0);
                        let mut monitor = Monitor { timeout: INITIAL_TIMEOUT, timer: Timer::never() };
                        arms.push(monitor.timer.arm(TimerKey::process(k), now, Duration(INITIAL_TIMEOUT)));
                        self.monitors.insert(k, monitor);
                        for (p, pending) in self.pending.iter_mut().enumerate() {
                            if p != m.0 {
                                pending.insert((Label::New, k));
                            }
                        }
                    } else {
                        self.pending[m.0].remove(&(Label::New, k));
                    }
                    self.pending[m.0].insert((Label::Ack, k));
                }
                Label::Ack => {
                    self.pending[m.0].remove(&(Label::New, k));
                }
            }
        }
        self.pending[m.0].retain(|&(label, k)| label == Label::New || announced.contains(&k));
        arms
    }

    fn consider_leader(&mut self, now: SimTime, leader: ProcessId, hb: u32) -> Option<TimerArm> {
        if leader > self.leader || leader == self.id {
            return None;
        }
        self.leader = leader;
        let monitor = self.monitors.entry(leader).or_insert_with(Monitor::lapsed);
        let expired = monitor.timer.expired(now);
        let current = self.hopbound.get(&leader).copied().unwrap_or(0);
        if hb < current && !expired {
            return None;
        }
        self.hopbound.insert(leader, hb);
        if expired {
            monitor.timeout *= 2;
        }
        Some(monitor.timer.arm(TimerKey::process(leader), now, Duration(monitor.timeout)))
    }

    /// Handles the expiry of `timer[j]`: the process proposes itself if `j` is
    /// its current leader. Returns whether the expiry was acted upon.
    pub fn on_timer_expire(&mut self, now: SimTime, j: ProcessId, generation: u64) -> bool {
        if self.leader == self.id || j != self.leader {
            return false;
        }
        let Some(monitor) = self.monitors.get(&j) else {
            return false;
        };
        if !monitor.timer.fires(generation, now) {
            return false;
        }
        self.leader = self.id;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(id: u32) -> ProcessId {
        ProcessId::from_u32(id)
    }

    fn set(pairs: &[(Label, u32)]) -> PendingSet {
        pairs.iter().map(|&(l, id)| (l, p(id))).collect()
    }

    fn msg(leader: Option<(u32, u32)>, pending: &[(Label, u32)]) -> AliveUnknown {
        AliveUnknown { leader: leader.map(|(l, hb)| (p(l), hb)), pending: set(pending), seq: None }
    }

    const A: ChannelId = ChannelId(0);
    const B: ChannelId = ChannelId(1);

    #[test]
    fn init_announces_self_everywhere() {
        let s = UnknownState::new(p(2), 2);
        assert_eq!(s.pending(A), &set(&[(Label::New, 2)]));
        assert_eq!(s.pending(B), &set(&[(Label::New, 2)]));
        assert_eq!(s.hopbound(p(2)), 1);
        assert_eq!(s.leader(), p(2));
        assert_eq!(s.known().len(), 1);
        assert_eq!(s.neighbor_of(A), None);
    }

    #[test]
    fn fresh_tick_sends_bottom() {
        let mut s = UnknownState::new(p(3), 2);
        let out = s.on_tick();
        assert_eq!(out.len(), 2);
        for (_, m) in out {
            assert_eq!(m, msg(None, &[(Label::New, 3)]));
        }
    }

    #[test]
    fn tick_with_leader_pair() {
        let mut s = UnknownState::new(p(2), 1);
        s.known.insert(p(1));
        s.hopbound.insert(p(1), 2);
        s.leader = p(1);
        let out = s.on_tick();
        assert_eq!(out[0].1.leader, Some((p(1), 1)));

        s.pending[0].clear();
        s.hopbound.insert(p(1), 3);
        assert_eq!(s.on_tick()[0].1, msg(Some((1, 2)), &[]));
    }

    #[test]
    fn learning_a_name() {
        let mut s = UnknownState::new(p(2), 3);
        let arms = s.on_receive(SimTime(5), A, p(1), &msg(None, &[(Label::New, 1)]));
        assert_eq!(s.known(), &[p(1), p(2)].into_iter().collect());
        assert_eq!(s.hopbound(p(2)), 2);
        assert_eq!(arms.len(), 1);
        assert_eq!(s.neighbor_of(A), Some(p(1)));
        // the channel it came from gets the acknowledgement, not the name
        assert_eq!(s.pending(A), &set(&[(Label::New, 2), (Label::Ack, 1)]));
        assert_eq!(s.pending(B), &set(&[(Label::New, 1), (Label::New, 2)]));
        assert_eq!(s.pending(ChannelId(2)), &set(&[(Label::New, 1), (Label::New, 2)]));
        // a repeated announcement changes nothing
        s.on_receive(SimTime(6), A, p(1), &msg(None, &[(Label::New, 1)]));
        assert_eq!(s.pending(A), &set(&[(Label::New, 2), (Label::Ack, 1)]));
        assert_eq!(s.hopbound(p(2)), 2);
    }

    #[test]
    fn ack_clears_announcement() {
        let mut s = UnknownState::new(p(1), 2);
        s.on_receive(SimTime(3), B, p(2), &msg(None, &[(Label::Ack, 1)]));
        assert!(s.pending(B).is_empty());
        assert_eq!(s.pending(A), &set(&[(Label::New, 1)]));
    }

    #[test]
    fn ack_withdrawn_once_announcement_stops() {
        let mut s = UnknownState::new(p(2), 1);
        s.pending[0] = set(&[(Label::Ack, 1)]);
        s.on_receive(SimTime(3), A, p(1), &msg(None, &[]));
        assert!(s.pending(A).is_empty());
    }

    #[test]
    fn leader_pass_adopts_and_arms() {
        let mut s = UnknownState::new(p(3), 1);
        s.on_receive(SimTime(4), A, p(1), &msg(None, &[(Label::New, 1)]));
        let arms = s.on_receive(SimTime(10), A, p(1), &msg(Some((1, 2)), &[]));
        assert_eq!(s.leader(), p(1));
        assert_eq!(s.hopbound(p(1)), 2);
        // discovery timer (armed at 4 for 1 tick) had run out
        assert_eq!(s.timeout(p(1)), Some(Duration(2)));
        assert_eq!(arms, vec![TimerArm { key: TimerKey::process(p(1)), deadline: SimTime(12), generation: 2 }]);

        // smaller hopbound while the timer runs is ignored
        assert!(s.on_receive(SimTime(11), A, p(1), &msg(Some((1, 1)), &[])).is_empty());
        assert_eq!(s.hopbound(p(1)), 2);
        // larger one is taken without doubling
        s.on_receive(SimTime(11), A, p(1), &msg(Some((1, 3)), &[]));
        assert_eq!(s.hopbound(p(1)), 3);
        assert_eq!(s.timeout(p(1)), Some(Duration(2)));
        // once expired, a smaller one is taken and the timeout doubles
        s.on_receive(SimTime(20), A, p(1), &msg(Some((1, 1)), &[]));
        assert_eq!(s.hopbound(p(1)), 1);
        assert_eq!(s.timeout(p(1)), Some(Duration(4)));
    }

    #[test]
    fn own_id_and_larger_ids_skip_leader_pass() {
        let mut s = UnknownState::new(p(2), 1);
        s.on_receive(SimTime(4), A, p(1), &msg(Some((2, 5)), &[(Label::New, 1)]));
        assert_eq!(s.hopbound(p(2)), 2);
        assert_eq!(s.leader(), p(2));
        s.on_receive(SimTime(5), A, p(3), &msg(Some((3, 5)), &[]));
        assert_eq!(s.leader(), p(2));
        assert_eq!(s.hopbound(p(3)), 0);
    }

    #[test]
    fn timer_expiry_resets_to_self() {
        let mut s = UnknownState::new(p(2), 1);
        s.on_receive(SimTime(1), A, p(1), &msg(None, &[(Label::New, 1), (Label::New, 3)]));
        let arm = s.on_receive(SimTime(5), A, p(1), &msg(Some((1, 2)), &[]))[0];
        // expiry for a non-leader entry is ignored
        let other = s.timer(p(3)).unwrap();
        assert!(!s.on_timer_expire(SimTime(9), p(3), other.generation()));
        assert!(s.on_timer_expire(arm.deadline, p(1), arm.generation));
        assert_eq!(s.leader(), p(2));
        // candidacy resumes on the next tick: three names known
        let out = s.on_tick();
        assert_eq!(out[0].1.leader, Some((p(2), 2)));
    }

    #[test]
    fn staleness_guard_drops_older_messages() {
        let mut s = UnknownState::new(p(2), 1).with_staleness_guard(true);
        let mut newer = msg(None, &[(Label::New, 1)]);
        newer.seq = Some(5);
        let mut older = msg(None, &[(Label::New, 3)]);
        older.seq = Some(4);
        s.on_receive(SimTime(3), A, p(1), &newer);
        s.on_receive(SimTime(4), A, p(1), &older);
        assert!(!s.known().contains(&p(3)));
        assert_eq!(s.on_tick()[0].1.seq, Some(1));
    }
}
