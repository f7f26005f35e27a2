//! Per-vehicle simulation state.

use super::metrics::StopCounter;
use super::Role;
use crate::control::{ControlGains, TimeGapPolicy};
use crate::estimation::TrajectoryEstimate;
use crate::plant::{PlantParams, PlantState};
use crate::world::{Crossing, IntersectionId, PathPlan};
use crate::VehicleId;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Broadcast payload: sender state and its own trajectory estimate.
#[derive(Clone, Debug)]
pub(crate) struct Beacon {
    pub state: PlantState,
    pub sent_at: f64,
    pub estimate: Option<Arc<TrajectoryEstimate>>,
}

/// Consensus link from the owning vehicle to one target at one intersection.
/// Both vehicles measure positions on a shared axis that is zero at the pair point.
#[derive(Clone, Debug)]
pub(crate) struct TargetLink {
    pub target: VehicleId,
    pub intersection: IntersectionId,
    /// Own path arc-length of the pair point.
    pub ego_point: f64,
    /// Target path arc-length of the pair point.
    pub target_point: f64,
    pub gains: ControlGains,
    pub policy: TimeGapPolicy,
    pub target_length: f64,
    pub target_width: f64,
    /// Latest beacon delivered since the last refresh.
    pub fresh: Option<Beacon>,
    /// Delay-compensated target estimate in target path coordinates.
    pub compensated: Option<TrajectoryEstimate>,
}

impl TargetLink {
    /// Ego position on the shared axis.
    pub fn ego_axis(&self, s: f64) -> f64 {
        s - self.ego_point
    }
}

/// Conflict point on the vehicle's path used for occupancy checks.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PathConflict {
    pub key: (IntersectionId, usize),
    pub s: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct Vehicle {
    pub id: VehicleId,
    pub role: Role,
    pub entry_label: String,
    pub plan: PathPlan,
    pub params: PlantParams,
    pub state: PlantState,
    pub a_ref: f64,
    pub spawn_time: f64,
    pub spawn_tick: u64,
    pub links: Vec<TargetLink>,
    /// Slot held per intersection.
    pub slots: BTreeMap<IntersectionId, u32>,
    pub own_estimate: Option<Arc<TrajectoryEstimate>>,
    pub stops: StopCounter,
    pub energy: f64,
    pub min_speed: f64,
    pub conflicts: Vec<PathConflict>,
    pub est_err: Option<f64>,
}

impl Vehicle {
    pub fn length(&self) -> f64 {
        self.params.length
    }

    pub fn rear(&self) -> f64 {
        self.state.s - self.params.length
    }

    /// Next crossing whose stop bar is still ahead of the front bumper.
    pub fn approaching(&self) -> Option<&Crossing> {
        self.plan.crossings.iter().find(|c| self.state.s < c.entry_s)
    }

    pub fn in_box(&self, c: &Crossing) -> bool {
        self.state.s >= c.entry_s && self.rear() < c.exit_s
    }

    /// Crossing the vehicle is approaching or inside, whichever comes first.
    pub fn current_crossing(&self) -> Option<&Crossing> {
        self.plan.crossings.iter().find(|c| self.rear() < c.exit_s)
    }
}
