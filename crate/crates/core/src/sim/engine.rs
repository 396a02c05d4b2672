//! The event loop that drives protocol state machines over simulated channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::channel::{ChannelConfig, ChannelState, DeliveryOutcome, ScriptStep};
use super::event::{EventKind, EventQueue, TimerArm};
use super::log::Observer;
use crate::error::SimError;
use crate::known::{HopboundSelection, KnownState};
use crate::model::{AliveKnown, Duration, ProcessId, SimTime, WireMessage};
use crate::topology::{Digraph, EdgeId};
use crate::unknown::{ChannelId, UnknownState};

const OFFSET_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Known { selection: HopboundSelection },
    Unknown { staleness_guard: bool },
}

/// Everything needed to build a [`Simulation`].
#[derive(Clone, Debug)]
pub struct SimSetup {
    pub graph: Digraph,
    /// One entry per edge of `graph`, by edge id.
    pub channels: Vec<ChannelConfig>,
    pub protocol: Protocol,
    pub period: Duration,
    pub seed: u64,
    pub crashes: Vec<(ProcessId, SimTime)>,
    /// Give every process a tick phase drawn from `[0, period)`.
    pub clock_offsets: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub sends: u64,
    pub drops: u64,
    pub deliveries: u64,
    /// Deliveries that reached a crashed process.
    pub discarded: u64,
}

#[derive(Clone, Debug)]
enum Node {
    Known(KnownState),
    Unknown(UnknownState),
}

impl Node {
    fn leader(&self) -> ProcessId {
        match self {
            Node::Known(s) => s.leader(),
            Node::Unknown(s) => s.leader(),
        }
    }
}

/// A channel of the unknown-membership protocol: the neighbor behind it and
/// the edge to it, if there is one.
#[derive(Clone, Copy, Debug)]
struct Port {
    out_edge: Option<EdgeId>,
}

#[derive(Debug)]
pub struct Simulation {
    graph: Digraph,
    channels: Vec<ChannelState>,
    nodes: Vec<Node>,
    ports: Vec<Vec<Port>>,
    receiver_port: Vec<usize>,
    crashed: Vec<bool>,
    leaders: Vec<ProcessId>,
    queue: EventQueue,
    period: Duration,
    stats: Stats,
    known_buf: Vec<(ProcessId, AliveKnown)>,
}

impl Simulation {
    pub fn new(setup: SimSetup) -> Self {
        let SimSetup { graph, channels, protocol, period, seed, crashes, clock_offsets } = setup;
        assert_eq!(channels.len(), graph.edges().len(), "one channel configuration per edge");
        assert!(period.0 >= 1, "period must be at least one tick");
        let n = graph.n() as usize;

        let channels = channels
            .into_iter()
            .enumerate()
            .map(|(e, config)| ChannelState::new(config, seed, e as u64))
            .collect();

        let mut ports = vec![Vec::new(); n];
        let mut receiver_port = vec![usize::MAX; graph.edges().len()];
        for p in graph.processes() {
            for (m, q) in graph.neighbors(p).into_iter().enumerate() {
                ports[p.index()].push(Port { out_edge: graph.edge_between(p, q) });
                if let Some(e) = graph.edge_between(q, p) {
                    receiver_port[e] = m;
                }
            }
        }

        let nodes = graph
            .processes()
            .map(|p| match protocol {
                Protocol::Known { selection } => Node::Known(
                    KnownState::new(p, graph.n(), graph.out_neighbors(p), graph.in_neighbors(p))
                        .with_selection(selection),
                ),
                Protocol::Unknown { staleness_guard } => Node::Unknown(
                    UnknownState::new(p, ports[p.index()].len()).with_staleness_guard(staleness_guard),
                ),
            })
            .collect();

        let mut queue = EventQueue::new();
        let mut crashes = crashes;
        crashes.sort_by_key(|&(p, t)| (t, p));
        for (p, t) in crashes {
            assert!(p.get() as usize <= n, "crash of unknown process {p}");
            queue.schedule(t, EventKind::Crash(p)).expect("queue starts at time zero");
        }
        let mut offsets = ChaCha8Rng::seed_from_u64(seed);
        offsets.set_stream(OFFSET_STREAM);
        for p in graph.processes() {
            let offset = if clock_offsets { offsets.gen_range(0..period.0) } else { 0 };
            queue
                .schedule(SimTime(offset) + period, EventKind::Tick(p))
                .expect("queue starts at time zero");
        }

        Self {
            leaders: graph.processes().collect(),
            graph,
            channels,
            nodes,
            ports,
            receiver_port,
            crashed: vec![false; n],
            queue,
            period,
            stats: Stats::default(),
            known_buf: Vec::new(),
        }
    }

    pub fn graph(&self) -> &Digraph {
        &self.graph
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    pub fn leader(&self, p: ProcessId) -> ProcessId {
        self.leaders[p.index()]
    }

    pub fn is_crashed(&self, p: ProcessId) -> bool {
        self.crashed[p.index()]
    }

    pub fn known_state(&self, p: ProcessId) -> Option<&KnownState> {
        match &self.nodes[p.index()] {
            Node::Known(s) => Some(s),
            Node::Unknown(_) => None,
        }
    }

    pub fn unknown_state(&self, p: ProcessId) -> Option<&UnknownState> {
        match &self.nodes[p.index()] {
            Node::Unknown(s) => Some(s),
            Node::Known(_) => None,
        }
    }

    /// Fixes the next decisions of the channel on `edge`.
    pub fn set_channel_script(&mut self, edge: EdgeId, script: impl IntoIterator<Item = ScriptStep>) {
        self.channels[edge].set_script(script);
    }

    /// Crashes `p` at `time`, which must not lie in the past.
    pub fn schedule_crash(&mut self, p: ProcessId, time: SimTime) -> Result<(), SimError> {
        self.queue.schedule(time, EventKind::Crash(p)).map(|_| ())
    }

    /// Dispatches every event with a time up to and including `horizon`.
    /// Can be called again with a later horizon to continue the run.
    pub fn run_until(&mut self, horizon: SimTime, observer: &mut impl Observer) {
        while self.queue.peek_time().is_some_and(|t| t <= horizon) {
            let event = self.queue.pop().expect("peeked");
            self.dispatch(event.time, event.kind, observer);
        }
    }

    fn dispatch(&mut self, now: SimTime, kind: EventKind, observer: &mut impl Observer) {
        match kind {
            EventKind::Crash(p) => {
                if !self.crashed[p.index()] {
                    self.crashed[p.index()] = true;
                    observer.crash(now, p);
                }
            }
            EventKind::Tick(p) => {
                if self.crashed[p.index()] {
                    return;
                }
                observer.tick(now, p);
                self.tick(now, p, observer);
                self.queue
                    .schedule(now + self.period, EventKind::Tick(p))
                    .expect("future tick");
            }
            EventKind::Deliver { edge, from, to, sent_at, message } => {
                if self.crashed[to.index()] {
                    self.stats.discarded += 1;
                    return;
                }
                self.stats.deliveries += 1;
                observer.deliver(now, sent_at, from, to, &message);
                self.receive(now, edge, from, to, &message);
                self.note_leader(now, to, observer);
            }
            EventKind::TimerExpiry { process, key, generation } => {
                if self.crashed[process.index()] {
                    return;
                }
                let fired = match &mut self.nodes[process.index()] {
                    Node::Known(s) => s.on_timer_expire(
                        now,
                        key.source,
                        key.hopbound.expect("path timer"),
                        generation,
                    ),
                    Node::Unknown(s) => s.on_timer_expire(now, key.source, generation),
                };
                if fired {
                    observer.timer(now, process, key, true);
                    self.note_leader(now, process, observer);
                }
            }
        }
    }

    fn tick(&mut self, now: SimTime, p: ProcessId, observer: &mut impl Observer) {
        match &mut self.nodes[p.index()] {
            Node::Known(s) => {
                let mut buf = std::mem::take(&mut self.known_buf);
                buf.clear();
                s.emit(&mut buf);
                for (i, &(to, msg)) in buf.iter().enumerate() {
                    let (neighbor, edge) = self.graph.out_edges(p)[i];
                    debug_assert_eq!(neighbor, to);
                    self.send(now, edge, p, to, WireMessage::Known(msg), observer);
                }
                self.known_buf = buf;
            }
            Node::Unknown(s) => {
                let out = s.on_tick();
                for (ChannelId(m), msg) in out {
                    if let Some(edge) = self.ports[p.index()][m].out_edge {
                        let to = self.graph.edge(edge).to;
                        self.send(now, edge, p, to, WireMessage::Unknown(msg), observer);
                    }
                }
            }
        }
    }

    fn send(
        &mut self,
        now: SimTime,
        edge: EdgeId,
        from: ProcessId,
        to: ProcessId,
        message: WireMessage,
        observer: &mut impl Observer,
    ) {
        self.stats.sends += 1;
        let outcome = self.channels[edge].on_send(now);
        observer.send(now, from, to, &message, outcome);
        match outcome {
            DeliveryOutcome::Drop => self.stats.drops += 1,
            DeliveryOutcome::DeliverAt(at) => {
                self.queue
                    .schedule(at, EventKind::Deliver { edge, from, to, sent_at: now, message })
                    .expect("delivery is never in the past");
            }
        }
    }

    fn receive(&mut self, now: SimTime, edge: EdgeId, from: ProcessId, to: ProcessId, message: &WireMessage) {
        match (&mut self.nodes[to.index()], message) {
            (Node::Known(s), WireMessage::Known(m)) => {
                if let Some(arm) = s.on_receive(now, m.leader, m.hopbound) {
                    schedule_timer(&mut self.queue, to, arm);
                }
            }
            (Node::Unknown(s), WireMessage::Unknown(m)) => {
                let port = ChannelId(self.receiver_port[edge]);
                for arm in s.on_receive(now, port, from, m) {
                    schedule_timer(&mut self.queue, to, arm);
                }
            }
            _ => unreachable!("message of the other protocol"),
        }
    }

    fn note_leader(&mut self, now: SimTime, p: ProcessId, observer: &mut impl Observer) {
        let leader = self.nodes[p.index()].leader();
        debug_assert!(leader <= p, "{p} elected {leader}");
        if leader != self.leaders[p.index()] {
            self.leaders[p.index()] = leader;
            observer.leader_change(now, p, leader);
        }
    }
}

fn schedule_timer(queue: &mut EventQueue, process: ProcessId, arm: TimerArm) {
    queue
        .schedule(
            arm.deadline,
            EventKind::TimerExpiry { process, key: arm.key, generation: arm.generation },
        )
        .expect("timeouts are positive");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AddParams;
    use crate::sim::{EventLog, LogRecord, LossMode, NullObserver};
    use crate::topology::{build_complete, build_ring};

    fn p(id: u32) -> ProcessId {
        ProcessId::from_u32(id)
    }

    fn config(k: u32, d: u64, mode: LossMode) -> ChannelConfig {
        ChannelConfig {
            params: AddParams::new(k, Duration(d), SimTime::ZERO).unwrap(),
            mode,
            pre_stabilization_drop: 1.0,
        }
    }

    fn setup(graph: Digraph, protocol: Protocol, mode: LossMode, seed: u64) -> SimSetup {
        let channels = vec![config(4, 12, mode); graph.edges().len()];
        SimSetup {
            graph,
            channels,
            protocol,
            period: Duration(1),
            seed,
            crashes: Vec::new(),
            clock_offsets: true,
        }
    }

    const KNOWN: Protocol = Protocol::Known { selection: HopboundSelection::Penalized };
    const LOSSY: LossMode = LossMode::Iid { drop_probability: 0.3 };

    #[test]
    fn empty_scenario_empty_log() {
        let mut sim = Simulation::new(setup(Digraph::new(0), KNOWN, LOSSY, 1));
        let mut log = EventLog::new();
        sim.run_until(SimTime(100), &mut log);
        assert!(log.is_empty());
    }

    #[test]
    fn single_process_ticks_once_per_period() {
        let mut sim = Simulation::new(setup(Digraph::new(1), KNOWN, LOSSY, 1));
        let mut log = EventLog::new();
        sim.run_until(SimTime(10), &mut log);
        let ticks = log.records().iter().filter(|r| matches!(r, LogRecord::Tick { .. })).count();
        assert_eq!(ticks, 10);
        assert_eq!(log.len(), 10);
        assert_eq!(sim.leader(p(1)), p(1));
    }

    #[test]
    fn offsets_stay_inside_period() {
        let mut s = setup(Digraph::new(5), KNOWN, LOSSY, 3);
        s.period = Duration(7);
        let mut sim = Simulation::new(s);
        let mut log = EventLog::new();
        sim.run_until(SimTime(6), &mut log);
        assert!(log.is_empty());
        sim.run_until(SimTime(13), &mut log);
        assert_eq!(log.len(), 5);
    }

    #[test]
    fn no_delivery_of_messages_sent_after_crash() {
        for protocol in [KNOWN, Protocol::Unknown { staleness_guard: false }] {
            let mut s = setup(build_ring(6).unwrap(), protocol, LOSSY, 9);
            s.crashes = vec![(p(2), SimTime(50))];
            let mut sim = Simulation::new(s);
            let mut log = EventLog::new();
            sim.run_until(SimTime(400), &mut log);
            let mut saw_crash = false;
            for r in log.records() {
                match *r {
                    LogRecord::Crash { time, process } => {
                        assert_eq!((time, process), (SimTime(50), p(2)));
                        saw_crash = true;
                    }
                    LogRecord::Deliver { from, sent_at, .. } if from == p(2) => {
                        assert!(sent_at < SimTime(50));
                    }
                    LogRecord::Send { from, time, .. } | LogRecord::Tick { process: from, time } => {
                        assert!(from != p(2) || time < SimTime(50));
                    }
                    LogRecord::Deliver { to, time, .. } => assert!(to != p(2) || time < SimTime(50)),
                    _ => {}
                }
            }
            assert!(saw_crash);
        }
    }

    #[test]
    fn same_seed_same_log() {
        let run = |seed| {
            let mut sim = Simulation::new(setup(
                build_ring(7).unwrap(),
                Protocol::Unknown { staleness_guard: false },
                LOSSY,
                seed,
            ));
            let mut log = EventLog::new();
            sim.run_until(SimTime(300), &mut log);
            log.to_jsonl()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn every_delivery_matches_one_send() {
        let mut sim = Simulation::new(setup(build_complete(4), KNOWN, LOSSY, 2));
        let mut log = EventLog::new();
        sim.run_until(SimTime(500), &mut log);
        let mut outstanding = std::collections::BTreeMap::new();
        for r in log.records() {
            match r {
                LogRecord::Send { time, from, to, message, outcome: DeliveryOutcome::DeliverAt(at) } => {
                    *outstanding.entry((*time, *from, *to, format!("{message:?}"), *at)).or_insert(0) += 1;
                }
                LogRecord::Deliver { time, sent_at, from, to, message } => {
                    let key = (*sent_at, *from, *to, format!("{message:?}"), *time);
                    let count = outstanding.get_mut(&key).expect("delivery without a send");
                    *count -= 1;
                    if *count == 0 {
                        outstanding.remove(&key);
                    }
                }
                _ => {}
            }
        }
        let stats = sim.stats();
        assert_eq!(stats.sends, stats.drops + stats.deliveries + outstanding.len() as u64);
    }

    #[test]
    fn lossless_ring_elects_smallest() {
        for protocol in [KNOWN, Protocol::Unknown { staleness_guard: false }] {
            let mut sim = Simulation::new(setup(
                build_ring(8).unwrap(),
                protocol,
                LossMode::Iid { drop_probability: 0.0 },
                1,
            ));
            sim.run_until(SimTime(2000), &mut NullObserver);
            for q in 1..=8 {
                assert_eq!(sim.leader(p(q)), p(1), "{protocol:?}");
            }
        }
    }

    #[test]
    fn strict_add_reception_gap_within_delta() {
        let mut graph = Digraph::new(2);
        graph.add_edge(p(1), p(2)).unwrap();
        let mut s = setup(graph, KNOWN, LossMode::StrictAdd { drop_probability: 0.99 }, 6);
        s.channels = vec![config(4, 12, LossMode::StrictAdd { drop_probability: 0.99 })];
        let mut sim = Simulation::new(s);
        let mut log = EventLog::without_ticks();
        sim.run_until(SimTime(20_000), &mut log);
        let delta = 3 + 12;
        let receptions: Vec<u64> = log
            .records()
            .iter()
            .filter_map(|r| match r {
                LogRecord::Deliver { time, .. } => Some(time.0),
                _ => None,
            })
            .collect();
        assert!(receptions.len() > 1000);
        assert!(receptions[0] <= delta + 1);
        for w in receptions.windows(2) {
            assert!(w[1] - w[0] <= delta, "gap {} at {}", w[1] - w[0], w[0]);
        }
    }
}
