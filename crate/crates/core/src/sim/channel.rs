//! Per-edge delivery behavior.
//!
//! After stabilization a channel either loses messages independently
//! ([`LossMode::Iid`]) or additionally guarantees that no `K` consecutive
//! sends are all lost ([`LossMode::StrictAdd`]). Delivered messages take a
//! delay drawn uniformly from `[1, D]`. Before stabilization messages are
//! dropped with the pre-stabilization probability and otherwise take up to
//! `10 * D` ticks.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{AddParams, Duration, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossMode {
    Iid { drop_probability: f64 },
    StrictAdd { drop_probability: f64 },
}

impl LossMode {
    pub fn drop_probability(&self) -> f64 {
        match *self {
            LossMode::Iid { drop_probability } | LossMode::StrictAdd { drop_probability } => {
                drop_probability
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub params: AddParams,
    pub mode: LossMode,
    /// Drop probability before stabilization; 1.0 loses everything.
    pub pre_stabilization_drop: f64,
}

impl ChannelConfig {
    /// Whether the channel can satisfy the ADD property once stabilized.
    pub fn is_eventually_add(&self) -> bool {
        match self.mode {
            LossMode::StrictAdd { .. } => true,
            LossMode::Iid { drop_probability } => drop_probability < 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryOutcome {
    DeliverAt(SimTime),
    Drop,
}

/// One scripted channel decision: `None` drops, `Some(d)` delivers after `d`.
pub type ScriptStep = Option<Duration>;

#[derive(Clone, Debug)]
pub struct ChannelState {
    config: ChannelConfig,
    consecutive_misses: u32,
    rng: ChaCha8Rng,
    script: VecDeque<ScriptStep>,
}

impl ChannelState {
    /// `stream` selects an independent random stream under `seed`, so the
    /// draws of one channel never depend on how many other channels exist.
    pub fn new(config: ChannelConfig, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { config, consecutive_misses: 0, rng, script: VecDeque::new() }
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn consecutive_misses(&self) -> u32 {
        self.consecutive_misses
    }

    /// Overrides the next sends with fixed decisions; afterwards the loss
    /// mode applies again.
    pub fn set_script(&mut self, script: impl IntoIterator<Item = ScriptStep>) {
        self.script = script.into_iter().collect();
    }

    #[cfg(test)]
    pub(crate) fn set_consecutive_misses(&mut self, misses: u32) {
        self.consecutive_misses = misses;
    }

    pub fn on_send(&mut self, t: SimTime) -> DeliveryOutcome {
        if let Some(step) = self.script.pop_front() {
            return match step {
                None => DeliveryOutcome::Drop,
                Some(delay) => DeliveryOutcome::DeliverAt(t + delay),
            };
        }
        let AddParams { k, d, stabilization } = self.config.params;
        if t < stabilization {
            if self.rng.gen_bool(self.config.pre_stabilization_drop) {
                return DeliveryOutcome::Drop;
            }
            let max = (d.0 * 10).max(1);
            return DeliveryOutcome::DeliverAt(t + Duration(self.rng.gen_range(1..=max)));
        }
        let drop = match self.config.mode {
            LossMode::Iid { drop_probability } => self.rng.gen_bool(drop_probability),
            LossMode::StrictAdd { drop_probability } => {
                if self.consecutive_misses + 1 >= k {
                    false
                } else {
                    self.rng.gen_bool(drop_probability)
                }
            }
        };
        if drop {
            self.consecutive_misses += 1;
            return DeliveryOutcome::Drop;
        }
        self.consecutive_misses = 0;
        let delay = self.rng.gen_range(d.0.min(1)..=d.0);
        DeliveryOutcome::DeliverAt(t + Duration(delay))
    }
}
