//! Per-vehicle trip metrics, the energy surrogate and safety bookkeeping.

use crate::plant::PlantParams;
use crate::world::IntersectionId;
use crate::VehicleId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Speed below which a vehicle counts as stopped, m/s.
pub const STOP_SPEED: f64 = 0.1;
/// Minimum stopped duration for a full stop, s.
pub const STOP_DURATION: f64 = 0.5;

/// Positive tractive power of one tick, W.
pub fn tractive_power(v: f64, a: f64, p: &PlantParams) -> f64 {
    (p.m * a * v + p.c_v * v.powi(3) + p.c_f * v * v + p.f_drag * v).max(0.0)
}

/// Positive tractive work over a `(v, a)` trace sampled every `dt`, J.
pub fn energy_surrogate(trace: &[(f64, f64)], dt: f64, p: &PlantParams) -> f64 {
    trace.iter().map(|(v, a)| tractive_power(*v, *a, p) * dt).sum()
}

/// Counts episodes below `STOP_SPEED` lasting longer than `STOP_DURATION`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StopCounter {
    below_since: Option<f64>,
    counted: bool,
    pub stops: u32,
}

impl StopCounter {
    pub fn observe(&mut self, t: f64, v: f64) {
        if v < STOP_SPEED {
            let since = *self.below_since.get_or_insert(t);
            if !self.counted && t - since > STOP_DURATION {
                self.stops += 1;
                self.counted = true;
            }
        } else {
            self.below_since = None;
            self.counted = false;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: VehicleId,
    pub role: String,
    pub entry: String,
    pub spawn_time: f64,
    pub exit_time: Option<f64>,
    pub travel_time: Option<f64>,
    pub distance: f64,
    pub stops: u32,
    /// J
    pub energy: f64,
    pub min_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub spawned: usize,
    pub exited: usize,
    pub active: usize,
    pub mean_travel_time: Option<f64>,
    pub mean_energy: Option<f64>,
    pub total_stops: u32,
    pub min_speed: Option<f64>,
    pub occupancy_overlaps: usize,
    pub collisions: usize,
    pub failsafe_activations: usize,
    pub estimator_calls: u64,
    pub max_est_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub duration: f64,
    pub vehicles: Vec<VehicleRecord>,
    pub aggregates: Aggregates,
    pub violations: Vec<Violation>,
}

impl Summary {
    /// Completed trips only.
    pub fn completed(&self) -> impl Iterator<Item = &VehicleRecord> {
        self.vehicles.iter().filter(|r| r.travel_time.is_some())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Overlap {
        intersection: IntersectionId,
        point: usize,
        a: VehicleId,
        b: VehicleId,
        t: f64,
    },
    Collision {
        follower: VehicleId,
        leader: VehicleId,
        gap: f64,
        t: f64,
    },
}

/// Open and closed occupancy intervals of crossing conflict points.
#[derive(Clone, Debug, Default)]
pub struct OccupancyLog {
    /// (intersection, point) -> vehicle -> (entered, left)
    intervals: BTreeMap<(IntersectionId, usize), BTreeMap<VehicleId, (f64, Option<f64>)>>,
}

impl OccupancyLog {
    /// Records that `id` occupies the point at `t`; returns the vehicles it overlaps with
    /// the first time they meet.
    pub fn occupy(&mut self, key: (IntersectionId, usize), id: VehicleId, t: f64) -> Vec<VehicleId> {
        let entry = self.intervals.entry(key).or_default();
        let fresh = !matches!(entry.get(&id), Some((_, None)));
        if !fresh {
            return Vec::new();
        }
        let others = entry
            .iter()
            .filter(|(other, (_, left))| **other != id && left.is_none())
            .map(|(other, _)| *other)
            .collect();
        entry.insert(id, (t, None));
        others
    }

    pub fn vacate(&mut self, key: (IntersectionId, usize), id: VehicleId, t: f64) {
        if let Some(iv) = self.intervals.get_mut(&key).and_then(|m| m.get_mut(&id)) {
            if iv.1.is_none() {
                iv.1 = Some(t);
            }
        }
    }

    pub fn is_occupying(&self, key: (IntersectionId, usize), id: VehicleId) -> bool {
        matches!(
            self.intervals.get(&key).and_then(|m| m.get(&id)),
            Some((_, None))
        )
    }

    /// Closed intervals recorded at `key`.
    pub fn intervals(&self, key: (IntersectionId, usize)) -> Vec<(VehicleId, f64, Option<f64>)> {
        self.intervals
            .get(&key)
            .map(|m| m.iter().map(|(id, (a, b))| (*id, *a, *b)).collect())
            .unwrap_or_default()
    }
}
