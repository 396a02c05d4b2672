use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::model::{ProcessId, SimTime, WireMessage};
use crate::topology::EdgeId;

/// Identifies one protocol timer of a process.
///
/// The known-membership protocol monitors `(source, hopbound)` pairs; the
/// unknown-membership protocol monitors a source only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimerKey {
    pub source: ProcessId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hopbound: Option<u32>,
}

impl TimerKey {
    pub fn path(source: ProcessId, hopbound: u32) -> Self {
        Self { source, hopbound: Some(hopbound) }
    }

    pub fn process(source: ProcessId) -> Self {
        Self { source, hopbound: None }
    }
}

/// A request from a state machine to be woken when a timer runs out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimerArm {
    pub key: TimerKey,
    pub deadline: SimTime,
    pub generation: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    Tick(ProcessId),
    Deliver {
        edge: EdgeId,
        from: ProcessId,
        to: ProcessId,
        sent_at: SimTime,
        message: WireMessage,
    },
    TimerExpiry {
        process: ProcessId,
        key: TimerKey,
        generation: u64,
    },
    Crash(ProcessId),
}

impl EventKind {
    /// Phase within one instant: crashes, then deliveries, then timer
    /// expiries, then ticks. A tick therefore sends the state its process
    /// holds at the end of the instant, and a message arriving exactly at a
    /// timer's deadline counts as on time.
    pub fn phase(&self) -> u8 {
        match self {
            EventKind::Crash(_) => 0,
            EventKind::Deliver { .. } => 1,
            EventKind::TimerExpiry { .. } => 2,
            EventKind::Tick(_) => 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Event {
    pub time: SimTime,
    pub sequence: u64,
    pub kind: EventKind,
}

impl Event {
    fn order_key(&self) -> (SimTime, u8, u64) {
        (self.time, self.kind.phase(), self.sequence)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.order_key() == other.order_key()
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest event first.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other.order_key().cmp(&self.order_key())
    }
}

/// Pending events ordered by time, then [`EventKind::phase`], then insertion
/// sequence.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_sequence: u64,
    now: SimTime,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, time: SimTime, kind: EventKind) -> Result<u64, SimError> {
        if time < self.now {
            return Err(SimError::PastEvent { at: time, now: self.now });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Event { time, sequence, kind });
        Ok(sequence)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }

    /// Removes the next event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<Event> {
        let event = self.heap.pop()?;
        self.now = event.time;
        Some(event)
    }
}
