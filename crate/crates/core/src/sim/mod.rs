//! Fixed-step corridor simulation: spawning, reservation, estimation, control,
//! plant and channel, plus the signalized baseline and the all-way stop.

mod engine;
mod vehicle;
pub mod metrics;
pub mod scenario;
pub mod sensitivity;
pub mod signal;
pub mod snapshot;
pub mod spawn;
pub mod trace;

pub use engine::{RunResult, SimError, Simulation};
pub use scenario::{Mode, ScenarioConfig, ScenarioError};

use crate::control::AccelLimits;
use serde::{Deserialize, Serialize};

/// Channel RNG seed from the run seed and the channel's own salt.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    NpcCav,
    HitlEgo,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::NpcCav => "npc_cav",
            Role::HitlEgo => "hitl_ego",
        }
    }
}

/// Pedal positions of the driven vehicle, each in [0, 1].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PedalInput {
    pub throttle: f64,
    pub brake: f64,
}

impl PedalInput {
    /// Clamps both pedals into [0, 1]; the flag reports whether anything changed.
    pub fn clamped(self) -> (Self, bool) {
        let c = Self {
            throttle: if self.throttle.is_nan() { 0.0 } else { self.throttle.clamp(0.0, 1.0) },
            brake: if self.brake.is_nan() { 0.0 } else { self.brake.clamp(0.0, 1.0) },
        };
        (c, c != self)
    }

    /// Throttle maps onto [0, a_max], brake onto [a_min, 0]; brake wins when both are pressed.
    pub fn to_accel(self, limits: &AccelLimits) -> f64 {
        let (p, _) = self.clamped();
        if p.brake > 0.0 {
            p.brake * limits.a_min
        } else {
            p.throttle * limits.a_max
        }
    }
}
