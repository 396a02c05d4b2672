//! Eventual leader election with known membership.
//!
//! Every process knows `n`. Each period it forwards the best-known leader's
//! ALIVE with the hopbound decremented, provided the hopbound is still above
//! one. A receiver tracks one timer per `(leader, hopbound)` pair, doubling the
//! pair's timeout whenever a message arrives on an already expired timer, and
//! counts expirations as penalties. The hopbound it forwards is the largest
//! one among the least penalized pairs whose timers still run. When all of the
//! current leader's timers have expired it proposes itself again.
//!
//! Timer and penalty tables are stored sparsely: an entry that was never
//! touched still has its initial value (timeout 1, armed to expire at time 1,
//! penalty -1) and is materialized on first write. This keeps memory linear
//! in the number of pairs actually heard of instead of `n * n` per process.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{AliveKnown, Duration, ProcessId, SimTime};
use crate::sim::{TimerArm, TimerKey};
use crate::timer::Timer;

const INITIAL_TIMEOUT: u64 = 1;
const INITIAL_DEADLINE: SimTime = SimTime(INITIAL_TIMEOUT);
const INITIAL_PENALTY: i64 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct PathMonitor {
    timeout: u64,
    timer: Timer,
    penalty: i64,
}

impl Default for PathMonitor {
    fn default() -> Self {
        Self {
            timeout: INITIAL_TIMEOUT,
            timer: Timer::armed_until(INITIAL_DEADLINE),
            penalty: INITIAL_PENALTY,
        }
    }
}

/// How a process picks the hopbound it forwards for its leader.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopboundSelection {
    /// Largest hopbound among the least penalized running timers.
    #[default]
    Penalized,
    /// Largest hopbound among the running timers, ignoring penalties. Fits
    /// networks where every channel is eventually ADD.
    Longest,
}

#[derive(Clone, Debug)]
pub struct KnownState {
    id: ProcessId,
    n: u32,
    leader: ProcessId,
    hopbound: Vec<u32>,
    monitors: BTreeMap<ProcessId, BTreeMap<u32, PathMonitor>>,
    out_neighbors: Vec<ProcessId>,
    in_neighbors: Vec<ProcessId>,
    selection: HopboundSelection,
}

impl KnownState {
    pub fn new(
        id: ProcessId,
        n: u32,
        out_neighbors: impl IntoIterator<Item = ProcessId>,
        in_neighbors: impl IntoIterator<Item = ProcessId>,
    ) -> Self {
        assert!(id.get() <= n, "{id} outside 1..={n}");
        let mut hopbound = vec![0; n as usize];
        hopbound[id.index()] = n;
        Self {
            id,
            n,
            leader: id,
            hopbound,
            monitors: BTreeMap::new(),
            out_neighbors: out_neighbors.into_iter().collect(),
            in_neighbors: in_neighbors.into_iter().collect(),
            selection: HopboundSelection::Penalized,
        }
    }

    pub fn with_selection(mut self, selection: HopboundSelection) -> Self {
        self.selection = selection;
        self
    }

    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn leader(&self) -> ProcessId {
        self.leader
    }

    pub fn hopbound(&self, j: ProcessId) -> u32 {
        self.hopbound[j.index()]
    }

    pub fn out_neighbors(&self) -> &[ProcessId] {
        &self.out_neighbors
    }

    pub fn in_neighbors(&self) -> &[ProcessId] {
        &self.in_neighbors
    }

    fn monitor(&self, j: ProcessId, x: u32) -> PathMonitor {
        self.monitors
            .get(&j)
            .and_then(|row| row.get(&x))
            .copied()
            .unwrap_or_default()
    }

    pub fn timeout(&self, j: ProcessId, x: u32) -> Duration {
        Duration(self.monitor(j, x).timeout)
    }

    pub fn timer(&self, j: ProcessId, x: u32) -> Timer {
        if j == self.id && x == self.n {
            return Timer::never();
        }
        self.monitor(j, x).timer
    }

    pub fn penalty(&self, j: ProcessId, x: u32) -> i64 {
        self.monitor(j, x).penalty
    }

    /// Messages for this period: `ALIVE(leader, hopbound[leader] - 1)` to every
    /// out-neighbor, or nothing once the hopbound has run down to one.
    pub fn on_tick(&self) -> Vec<(ProcessId, AliveKnown)> {
        let mut out = Vec::new();
        self.emit(&mut out);
        out
    }

    pub(crate) fn emit(&self, out: &mut Vec<(ProcessId, AliveKnown)>) {
        let hb = self.hopbound[self.leader.index()];
        if hb > 1 {
            let msg = AliveKnown { leader: self.leader, hopbound: hb - 1 };
            out.extend(self.out_neighbors.iter().map(|&to| (to, msg)));
        }
    }

    /// Handles `ALIVE(leader, hb)`. Returns the timer to schedule, if the
    /// message was accepted.
    pub fn on_receive(&mut self, now: SimTime, leader: ProcessId, hb: u32) -> Option<TimerArm> {
        if leader == self.id || leader > self.leader {
            return None;
        }
        debug_assert!((1..self.n).contains(&hb), "hopbound {hb} reached the state machine");
        self.leader = leader;
        let entry = self.monitors.entry(leader).or_default().entry(hb).or_default();
        if entry.timer.expired(now) {
            entry.timeout *= 2;
        }
        let arm = entry.timer.arm(TimerKey::path(leader, hb), now, Duration(entry.timeout));
        let selected = self
            .select_for(leader, now)
            .expect("the timer just armed is running");
        self.hopbound[leader.index()] = selected;
        Some(arm)
    }

    /// Handles the expiry of `timer[j][hb]`. Returns whether the expiry was
    /// acted upon; expiries of stale armings, of non-leader timers and while
    /// self-elected are ignored.
    pub fn on_timer_expire(&mut self, now: SimTime, j: ProcessId, hb: u32, generation: u64) -> bool {
        if self.leader == self.id || j != self.leader {
            return false;
        }
        let Some(entry) = self.monitors.get_mut(&j).and_then(|row| row.get_mut(&hb)) else {
            return false;
        };
        if !entry.timer.fires(generation, now) {
            return false;
        }
        entry.penalty += 1;
        match self.select_for(j, now) {
            None => self.leader = self.id,
            Some(selected) => self.hopbound[j.index()] = selected,
        }
        true
    }

    /// Hopbounds `x` whose `timer[j][x]` is still running, with penalties.
    fn not_expired(&self, j: ProcessId, now: SimTime) -> Vec<(u32, i64)> {
        let row = self.monitors.get(&j);
        if now < INITIAL_DEADLINE {
            // Untouched entries are still running at this point.
            return (1..=self.n)
                .filter_map(|x| {
                    let m = row.and_then(|r| r.get(&x)).copied().unwrap_or_default();
                    (!m.timer.expired(now)).then_some((x, m.penalty))
                })
                .collect();
        }
        row.into_iter()
            .flatten()
            .filter(|(_, m)| !m.timer.expired(now))
            .map(|(&x, m)| (x, m.penalty))
            .collect()
    }

    fn select_for(&self, j: ProcessId, now: SimTime) -> Option<u32> {
        let running = self.not_expired(j, now);
        match self.selection {
            HopboundSelection::Penalized => select_hopbound(running),
            HopboundSelection::Longest => running.into_iter().map(|(x, _)| x).max(),
        }
    }
}

/// Among `(hopbound, penalty)` candidates, keeps those with the smallest
/// penalty and returns the largest hopbound; `None` when there are no
/// candidates.
///
/// A penalty of -1 means the timer never expired and ranks ahead of 0.
pub fn select_hopbound(candidates: impl IntoIterator<Item = (u32, i64)>) -> Option<u32> {
    candidates
        .into_iter()
        .min_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(hb, _)| hb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(id: u32) -> ProcessId {
        ProcessId::from_u32(id)
    }

    fn state(id: u32, n: u32, out: &[u32]) -> KnownState {
        KnownState::new(p(id), n, out.iter().map(|&i| p(i)), std::iter::empty())
    }

    #[test]
    fn init_layout() {
        let s = state(1, 3, &[]);
        assert_eq!(s.leader(), p(1));
        assert_eq!([s.hopbound(p(1)), s.hopbound(p(2)), s.hopbound(p(3))], [3, 0, 0]);

        let s = state(2, 2, &[]);
        assert_eq!(s.timer(p(2), 2).deadline(), None);
        assert!(!s.timer(p(2), 2).expired(SimTime(u64::MAX)));
        for x in 1..=2 {
            assert_eq!(s.timer(p(1), x).deadline(), Some(SimTime(1)));
            assert_eq!(s.timeout(p(1), x), Duration(1));
        }

        let s = state(3, 5, &[]);
        for j in [1, 2, 4, 5] {
            for x in 1..=5 {
                assert_eq!(s.penalty(p(j), x), -1);
            }
        }
    }

    #[test]
    fn tick_forwards_leader_with_decremented_hopbound() {
        let mut s = state(3, 4, &[2, 4]);
        s.leader = p(1);
        s.hopbound[0] = 2;
        let msg = AliveKnown { leader: p(1), hopbound: 1 };
        assert_eq!(s.on_tick(), vec![(p(2), msg), (p(4), msg)]);

        s.hopbound[0] = 1;
        assert!(s.on_tick().is_empty());

        let fresh = state(3, 5, &[2]);
        assert_eq!(fresh.on_tick(), vec![(p(2), AliveKnown { leader: p(3), hopbound: 4 })]);
    }

    #[test]
    fn receive_adopts_smaller_leader_and_doubles_expired_timeout() {
        let mut s = state(3, 4, &[]);
        let arm = s.on_receive(SimTime(10), p(1), 2).unwrap();
        assert_eq!(s.leader(), p(1));
        assert_eq!(s.timeout(p(1), 2), Duration(2));
        assert_eq!(arm.deadline, SimTime(12));
        assert_eq!(arm.key, TimerKey::path(p(1), 2));
        assert!(!s.timer(p(1), 2).expired(SimTime(11)));
        assert_eq!(s.hopbound(p(1)), 2);
    }

    #[test]
    fn receive_from_larger_leader_is_ignored() {
        let mut s = state(3, 4, &[]);
        s.on_receive(SimTime(10), p(1), 2).unwrap();
        let before = (s.leader(), s.hopbound(p(2)), s.timeout(p(2), 3));
        assert!(s.on_receive(SimTime(11), p(2), 3).is_none());
        assert_eq!(before, (s.leader(), s.hopbound(p(2)), s.timeout(p(2), 3)));
        // own id coming back
        assert!(s.on_receive(SimTime(11), p(3), 1).is_none());
    }

    #[test]
    fn repeated_receive_within_window_does_not_double() {
        let mut s = state(3, 4, &[]);
        s.on_receive(SimTime(10), p(1), 2).unwrap();
        s.on_receive(SimTime(11), p(1), 2).unwrap();
        assert_eq!(s.timeout(p(1), 2), Duration(2));
        assert_eq!(s.timer(p(1), 2).deadline(), Some(SimTime(13)));
    }

    #[test]
    fn select_hopbound_cases() {
        assert_eq!(select_hopbound([(4, 2), (3, 0)]), Some(3));
        assert_eq!(select_hopbound([(5, 1), (2, 1)]), Some(5));
        assert_eq!(select_hopbound([(3, 7)]), Some(3));
        assert_eq!(select_hopbound([(3, 0), (2, -1)]), Some(2));
        assert_eq!(select_hopbound([]), None);
    }

    #[test]
    fn first_expiry_raises_penalty_to_zero() {
        let mut s = state(3, 4, &[]);
        s.on_receive(SimTime(10), p(1), 3).unwrap();
        let arm = s.on_receive(SimTime(10), p(1), 2).unwrap();
        s.on_receive(SimTime(11), p(1), 3).unwrap();
        assert_eq!(s.penalty(p(1), 2), -1);
        assert!(s.on_timer_expire(arm.deadline, p(1), 2, arm.generation));
        assert_eq!(s.penalty(p(1), 2), 0);
        assert_eq!(s.leader(), p(1));
        assert_eq!(s.hopbound(p(1)), 3);
    }

    #[test]
    fn all_expired_makes_self_leader() {
        let mut s = state(3, 4, &[]);
        let a3 = s.on_receive(SimTime(10), p(1), 3).unwrap();
        let a2 = s.on_receive(SimTime(10), p(1), 2).unwrap();
        assert!(s.on_timer_expire(a3.deadline, p(1), 3, a3.generation));
        assert_eq!(s.leader(), p(3));
        // stale expiry after the reset is ignored
        assert!(!s.on_timer_expire(a2.deadline, p(1), 2, a2.generation));
    }

    #[test]
    fn expiry_recomputes_hopbound_from_remaining_timers() {
        let mut s = state(5, 5, &[]);
        // hopbound 4 learned late, so it outlives 3 and 2
        let a3 = s.on_receive(SimTime(10), p(1), 3).unwrap();
        let a2 = s.on_receive(SimTime(10), p(1), 2).unwrap();
        s.on_receive(SimTime(10), p(1), 4).unwrap();
        s.on_receive(SimTime(11), p(1), 4).unwrap();
        assert_eq!(s.hopbound(p(1)), 4);
        assert!(s.on_timer_expire(a3.deadline, p(1), 3, a3.generation));
        assert!(s.on_timer_expire(a2.deadline, p(1), 2, a2.generation));
        assert_eq!(s.leader(), p(1));
        assert_eq!(s.hopbound(p(1)), 4);
    }

    #[test]
    fn expiry_of_non_leader_or_stale_timer_ignored() {
        let mut s = state(3, 4, &[]);
        let arm = s.on_receive(SimTime(10), p(2), 3).unwrap();
        s.on_receive(SimTime(10), p(1), 3).unwrap();
        assert!(!s.on_timer_expire(arm.deadline, p(2), 3, arm.generation));
        let first = s.on_receive(SimTime(20), p(1), 2).unwrap();
        s.on_receive(SimTime(21), p(1), 2).unwrap();
        assert!(!s.on_timer_expire(first.deadline, p(1), 2, first.generation));
        assert_eq!(s.penalty(p(1), 2), -1);
    }
}
