//! Immutable per-tick view of the world handed to the telemetry server.

use super::scenario::Mode;
use super::signal::Aspect;
use super::Role;
use crate::hmi::{ImageQuad, SlotBox};
use crate::VehicleId;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleView {
    pub id: VehicleId,
    pub role: Role,
    pub x: f64,
    pub y: f64,
    /// rad
    pub heading: f64,
    pub v: f64,
    pub a: f64,
    pub slot: Option<u32>,
    pub intersection: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotView {
    #[serde(flatten)]
    pub slot: SlotBox,
    pub quad: ImageQuad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalView {
    pub intersection: u32,
    pub east_west: Aspect,
    pub north_south: Aspect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub sim_time: f64,
    pub mode: Mode,
    pub paused: bool,
    /// Vehicle whose camera the slot quads are projected for.
    pub camera_vehicle: Option<VehicleId>,
    pub image_size: [u32; 2],
    pub vehicles: Vec<VehicleView>,
    pub slots: Vec<SlotView>,
    pub signals: Vec<SignalView>,
    /// Intersections currently running the all-way stop.
    pub failsafe: Vec<u32>,
}
