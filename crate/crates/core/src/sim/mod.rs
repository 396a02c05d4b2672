//! Discrete-event simulation: event queue, channels, engine and observation.

mod channel;
mod engine;
mod event;
mod log;

pub use channel::{ChannelConfig, ChannelState, DeliveryOutcome, LossMode, ScriptStep};
pub use engine::{Protocol, SimSetup, Simulation, Stats};
pub use event::{Event, EventKind, EventQueue, TimerArm, TimerKey};
pub use log::{EventLog, LogRecord, NullObserver, Observer, Tee};
