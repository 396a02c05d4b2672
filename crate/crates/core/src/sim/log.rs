//! Observation of a run: the [`Observer`] callbacks the engine fires and
//! [`EventLog`], the observer that keeps everything.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::channel::DeliveryOutcome;
use super::event::TimerKey;
use crate::model::{ProcessId, SimTime, WireMessage};

/// Callbacks fired by the engine while it dispatches events.
///
/// Observers see exactly what an external observer of the system could see;
/// they never receive a mutable handle on protocol state.
pub trait Observer {
    fn tick(&mut self, _time: SimTime, _process: ProcessId) {}

    fn send(
        &mut self,
        _time: SimTime,
        _from: ProcessId,
        _to: ProcessId,
        _message: &WireMessage,
        _outcome: DeliveryOutcome,
    ) {
    }

    fn deliver(
        &mut self,
        _time: SimTime,
        _sent_at: SimTime,
        _from: ProcessId,
        _to: ProcessId,
        _message: &WireMessage,
    ) {
    }

    /// `fired` is false when the expiry was stale or ignored by the process.
    fn timer(&mut self, _time: SimTime, _process: ProcessId, _key: TimerKey, _fired: bool) {}

    fn crash(&mut self, _time: SimTime, _process: ProcessId) {}

    fn leader_change(&mut self, _time: SimTime, _process: ProcessId, _leader: ProcessId) {}
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullObserver;

impl Observer for NullObserver {}

impl<O: Observer + ?Sized> Observer for &mut O {
    fn tick(&mut self, time: SimTime, process: ProcessId) {
        (**self).tick(time, process);
    }

    fn send(
        &mut self,
        time: SimTime,
        from: ProcessId,
        to: ProcessId,
        message: &WireMessage,
        outcome: DeliveryOutcome,
    ) {
        (**self).send(time, from, to, message, outcome);
    }

    fn deliver(
        &mut self,
        time: SimTime,
        sent_at: SimTime,
        from: ProcessId,
        to: ProcessId,
        message: &WireMessage,
    ) {
        (**self).deliver(time, sent_at, from, to, message);
    }

    fn timer(&mut self, time: SimTime, process: ProcessId, key: TimerKey, fired: bool) {
        (**self).timer(time, process, key, fired);
    }

    fn crash(&mut self, time: SimTime, process: ProcessId) {
        (**self).crash(time, process);
    }

    fn leader_change(&mut self, time: SimTime, process: ProcessId, leader: ProcessId) {
        (**self).leader_change(time, process, leader);
    }
}

/// Forwards every callback to two observers.
#[derive(Debug)]
pub struct Tee<A, B>(pub A, pub B);

impl<A: Observer, B: Observer> Observer for Tee<A, B> {
    fn tick(&mut self, time: SimTime, process: ProcessId) {
        self.0.tick(time, process);
        self.1.tick(time, process);
    }

    fn send(
        &mut self,
        time: SimTime,
        from: ProcessId,
        to: ProcessId,
        message: &WireMessage,
        outcome: DeliveryOutcome,
    ) {
        self.0.send(time, from, to, message, outcome);
        self.1.send(time, from, to, message, outcome);
    }

    fn deliver(
        &mut self,
        time: SimTime,
        sent_at: SimTime,
        from: ProcessId,
        to: ProcessId,
        message: &WireMessage,
    ) {
        self.0.deliver(time, sent_at, from, to, message);
        self.1.deliver(time, sent_at, from, to, message);
    }

    fn timer(&mut self, time: SimTime, process: ProcessId, key: TimerKey, fired: bool) {
        self.0.timer(time, process, key, fired);
        self.1.timer(time, process, key, fired);
    }

    fn crash(&mut self, time: SimTime, process: ProcessId) {
        self.0.crash(time, process);
        self.1.crash(time, process);
    }

    fn leader_change(&mut self, time: SimTime, process: ProcessId, leader: ProcessId) {
        self.0.leader_change(time, process, leader);
        self.1.leader_change(time, process, leader);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Tick {
        time: SimTime,
        process: ProcessId,
    },
    Send {
        time: SimTime,
        from: ProcessId,
        to: ProcessId,
        message: WireMessage,
        outcome: DeliveryOutcome,
    },
    Deliver {
        time: SimTime,
        sent_at: SimTime,
        from: ProcessId,
        to: ProcessId,
        message: WireMessage,
    },
    TimerExpiry {
        time: SimTime,
        process: ProcessId,
        key: TimerKey,
        fired: bool,
    },
    Crash {
        time: SimTime,
        process: ProcessId,
    },
    LeaderChange {
        time: SimTime,
        process: ProcessId,
        leader: ProcessId,
    },
}

impl LogRecord {
    pub fn time(&self) -> SimTime {
        match *self {
            LogRecord::Tick { time, .. }
            | LogRecord::Send { time, .. }
            | LogRecord::Deliver { time, .. }
            | LogRecord::TimerExpiry { time, .. }
            | LogRecord::Crash { time, .. }
            | LogRecord::LeaderChange { time, .. } => time,
        }
    }

    /// Feeds this record to `observer` as if the engine had just produced it.
    pub fn replay(&self, observer: &mut impl Observer) {
        match self {
            LogRecord::Tick { time, process } => observer.tick(*time, *process),
            LogRecord::Send { time, from, to, message, outcome } => {
                observer.send(*time, *from, *to, message, *outcome);
            }
            LogRecord::Deliver { time, sent_at, from, to, message } => {
                observer.deliver(*time, *sent_at, *from, *to, message);
            }
            LogRecord::TimerExpiry { time, process, key, fired } => {
                observer.timer(*time, *process, *key, *fired);
            }
            LogRecord::Crash { time, process } => observer.crash(*time, *process),
            LogRecord::LeaderChange { time, process, leader } => {
                observer.leader_change(*time, *process, *leader);
            }
        }
    }
}

/// Every observed record, in dispatch order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    records: Vec<LogRecord>,
    record_ticks: bool,
}

impl EventLog {
    pub fn new() -> Self {
        Self { records: Vec::new(), record_ticks: true }
    }

    /// A log that skips tick records, which dominate long runs.
    pub fn without_ticks() -> Self {
        Self { records: Vec::new(), record_ticks: false }
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn replay(&self, observer: &mut impl Observer) {
        for record in &self.records {
            record.replay(observer);
        }
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { records, record_ticks: true })
    }
}

impl Observer for EventLog {
    fn tick(&mut self, time: SimTime, process: ProcessId) {
        if self.record_ticks {
            self.records.push(LogRecord::Tick { time, process });
        }
    }

    fn send(
        &mut self,
        time: SimTime,
        from: ProcessId,
        to: ProcessId,
        message: &WireMessage,
        outcome: DeliveryOutcome,
    ) {
        self.records.push(LogRecord::Send { time, from, to, message: message.clone(), outcome });
    }

    fn deliver(
        &mut self,
        time: SimTime,
        sent_at: SimTime,
        from: ProcessId,
        to: ProcessId,
        message: &WireMessage,
    ) {
        self.records.push(LogRecord::Deliver { time, sent_at, from, to, message: message.clone() });
    }

    fn timer(&mut self, time: SimTime, process: ProcessId, key: TimerKey, fired: bool) {
        self.records.push(LogRecord::TimerExpiry { time, process, key, fired });
    }

    fn crash(&mut self, time: SimTime, process: ProcessId) {
        self.records.push(LogRecord::Crash { time, process });
    }

    fn leader_change(&mut self, time: SimTime, process: ProcessId, leader: ProcessId) {
        self.records.push(LogRecord::LeaderChange { time, process, leader });
    }
}
