//! Deterministic multi-agent simulator of cooperative driving at
//! non-signalized intersections.
//!
//! The crate is organised along the vehicle pipeline: the [`world`] map and
//! its conflict points, [`reservation`] of crossing slots, [`control`] of the
//! longitudinal reference, the [`plant`] that realises it, the [`channel`]
//! between vehicles, [`estimation`] of target motion under delay and loss,
//! and the [`hmi`] projection of reserved slots. [`sim`] ties them together
//! in a fixed-timestep loop.

pub mod channel;
pub mod control;
pub mod estimation;
pub mod geometry;
pub mod hmi;
pub mod plant;
pub mod reservation;
pub mod sim;
pub mod world;

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
