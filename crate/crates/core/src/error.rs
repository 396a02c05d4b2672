use thiserror::Error;

use crate::model::{ProcessId, SimTime};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("process ids start at 1")]
    ZeroProcessId,
    #[error("K must be at least 1, got {0}")]
    InvalidK(u32),
    #[error("sending period must be at least 1 tick, got {0}")]
    InvalidPeriod(u64),
    #[error("system of {0} processes carries no messages")]
    SystemTooSmall(u32),
    #[error("leader {leader} outside 1..={n}")]
    LeaderOutOfRange { leader: u32, n: u32 },
    #[error("hopbound {hopbound} outside 1..={}", n - 1)]
    HopboundOutOfRange { hopbound: u32, n: u32 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("message truncated")]
    Truncated,
    #[error("expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("nonzero padding bits")]
    Padding,
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("malformed field: {0}")]
    Field(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("cannot schedule at {at} before current time {now}")]
    PastEvent { at: SimTime, now: SimTime },
    #[error("no channel from {from} to {to}")]
    NoChannel { from: ProcessId, to: ProcessId },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("a ring needs at least 2 processes, got {0}")]
    RingTooSmall(u32),
    #[error("no connected {k}-regular simple graph on {n} vertices")]
    InfeasibleRegular { n: u32, k: u32 },
    #[error("gave up after {attempts} attempts to draw a connected {k}-regular graph on {n} vertices")]
    RegularRetriesExhausted { n: u32, k: u32, attempts: u32 },
    #[error("subgraph is not strongly connected")]
    Disconnected,
    #[error("empty vertex set")]
    Empty,
    #[error("self-loop on {0}")]
    SelfLoop(ProcessId),
    #[error("process {id} outside 1..={n}")]
    UnknownProcess { id: u32, n: u32 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A scenario that cannot be run as described, naming the broken assumption.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("crash of {process} at {time} is not before the horizon {horizon}")]
    CrashAfterHorizon { process: ProcessId, time: SimTime, horizon: SimTime },
    #[error("every process crashes")]
    NoCorrectProcess,
    #[error("crash of unknown process {0}")]
    UnknownCrash(ProcessId),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("no convergence before horizon {0}")]
    NoConvergence(SimTime),
    #[error("re-election needs a scenario without scheduled crashes")]
    PreScheduledCrashes,
    #[error("i/o: {0}")]
    Io(String),
}
