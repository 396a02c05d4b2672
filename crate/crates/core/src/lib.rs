//! Eventual leader election (Ω) over ADD and eventually-ADD channels, with a
//! deterministic discrete-event simulator and an experiment harness.
//!
//! Two protocols are provided: [`KnownState`] for systems where every process
//! knows `n`, and [`UnknownState`] where names are discovered at runtime.

pub mod error;
pub mod harness;
pub mod known;
pub mod model;
pub mod sim;
pub mod timer;
pub mod topology;
pub mod unknown;

pub use error::{DecodeError, ModelError, ScenarioError, SimError, TopologyError};
pub use known::{select_hopbound, HopboundSelection, KnownState};
pub use model::{
    compute_delta, decode_known, decode_unknown, encode_known, encode_unknown, AddParams,
    AliveKnown, AliveUnknown, Duration, Label, PendingSet, ProcessId, SimTime, WireMessage,
};
pub use topology::{Digraph, EdgeId};
pub use unknown::{ChannelId, UnknownState};
