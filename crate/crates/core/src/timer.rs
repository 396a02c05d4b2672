use crate::model::{Duration, SimTime};
use crate::sim::{TimerArm, TimerKey};

/// A one-shot protocol timer.
///
/// A timer is expired once its deadline has passed; a timer that never
/// expires has no deadline. Each re-arm bumps the generation so that expiry
/// events scheduled for an earlier arming can be recognized as stale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timer {
    deadline: Option<SimTime>,
    generation: u64,
}

impl Timer {
    pub const fn armed_until(deadline: SimTime) -> Self {
        Self { deadline: Some(deadline), generation: 0 }
    }

    pub const fn never() -> Self {
        Self { deadline: None, generation: 0 }
    }

    pub fn deadline(&self) -> Option<SimTime> {
        self.deadline
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn expired(&self, now: SimTime) -> bool {
        matches!(self.deadline, Some(d) if d <= now)
    }

    pub fn arm(&mut self, key: TimerKey, now: SimTime, timeout: Duration) -> TimerArm {
        let deadline = now + timeout;
        self.deadline = Some(deadline);
        self.generation += 1;
        TimerArm { key, deadline, generation: self.generation }
    }

    /// Whether an expiry event for `generation` refers to this arming and the
    /// deadline has passed.
    pub fn fires(&self, generation: u64, now: SimTime) -> bool {
        self.generation == generation && self.expired(now)
    }
}
