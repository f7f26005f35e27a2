//! Arrival-time estimation and first-in-first-out crossing slot reservation.

use crate::world::{IntersectionId, LaneId};
use crate::VehicleId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReservationError {
    #[error("vehicle is stationary with zero preferred acceleration; arrival time undefined")]
    StalledVehicle,
    #[error("invalid ETA input: {0}")]
    InvalidInput(&'static str),
    #[error("vehicle {vehicle} holds no slot at intersection {intersection}")]
    NotHeld {
        vehicle: VehicleId,
        intersection: IntersectionId,
    },
    #[error("invalid reservation config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservationConfig {
    /// ETA trigger, s.
    pub t_theta: f64,
    /// Distance trigger, m.
    pub d_theta: f64,
    /// Headway behind the preceding vehicle's ETA, s.
    pub t_headway: f64,
    /// m/s²
    pub a_pref: f64,
    /// m/s²
    pub a_max: f64,
}

impl Default for ReservationConfig {
    fn default() -> Self {
        Self {
            t_theta: 8.0,
            d_theta: 50.0,
            t_headway: 1.5,
            a_pref: 2.0,
            a_max: 2.0,
        }
    }
}

impl ReservationConfig {
    pub fn validate(&self) -> Result<(), ReservationError> {
        let all = [
            self.t_theta,
            self.d_theta,
            self.t_headway,
            self.a_pref,
            self.a_max,
        ];
        if all.iter().all(|x| *x > 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(ReservationError::InvalidConfig(
                "all reservation parameters must be positive",
            ))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub t_temp: f64,
    pub t: f64,
}

/// Time to cover `d` metres starting at speed `v`, accelerating toward `v_lim`.
pub fn temp_eta(
    v: f64,
    d: f64,
    v_lim: f64,
    a_pref: f64,
    a_max: f64,
) -> Result<f64, ReservationError> {
    if !(d >= 0.0 && v >= 0.0 && v_lim > 0.0 && a_pref >= 0.0 && a_max >= 0.0) {
        return Err(ReservationError::InvalidInput(
            "requires d, v, a >= 0 and v_lim > 0",
        ));
    }
    if v >= v_lim {
        return Ok(d / v);
    }
    if a_pref == 0.0 {
        return if v > 0.0 {
            Ok(d / v)
        } else {
            Err(ReservationError::StalledVehicle)
        };
    }
    if v * v + 2.0 * a_pref * d <= v_lim * v_lim {
        Ok((-v + (v * v + 2.0 * a_pref * d).sqrt()) / a_pref)
    } else {
        if a_max == 0.0 {
            return Err(ReservationError::InvalidInput(
                "a_max must be positive below the speed limit",
            ));
        }
        Ok((2.0 * a_max * d + (v_lim - v).powi(2)) / (2.0 * a_max * v_lim))
    }
}

/// Arrival time no earlier than the preceding vehicle's plus the headway.
pub fn final_eta(t_temp: f64, preceding_eta: Option<f64>, t_headway: f64) -> f64 {
    match preceding_eta {
        Some(p) => t_temp.max(p + t_headway),
        None => t_temp,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotAssignment {
    pub vehicle_id: VehicleId,
    pub intersection: IntersectionId,
    /// 0 means unassigned.
    pub slot: u32,
    pub target_ids: BTreeSet<VehicleId>,
    pub immediate_preceding_id: Option<VehicleId>,
}

/// One vehicle's reservation attempt at an intersection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReservationRequest {
    pub vehicle: VehicleId,
    pub intersection: IntersectionId,
    pub movement: LaneId,
    /// s
    pub eta: f64,
    /// Distance to the stop bar, m.
    pub distance: f64,
    /// Closest vehicle ahead on the same approach that has not entered the intersection.
    pub preceding: Option<VehicleId>,
}

/// Orders same-tick requests by ascending ETA, then vehicle id.
pub fn order_requests(reqs: &mut [ReservationRequest]) {
    reqs.sort_by(|a, b| a.eta.total_cmp(&b.eta).then(a.vehicle.cmp(&b.vehicle)));
}

#[derive(Clone, Debug, Default)]
struct IntersectionPool {
    holders: BTreeMap<VehicleId, (SlotAssignment, LaneId)>,
    max_issued: u32,
}

#[derive(Clone, Debug, Default)]
pub struct SlotPool {
    pools: BTreeMap<IntersectionId, IntersectionPool>,
}

impl SlotPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn assignment(&self, vehicle: VehicleId, ix: IntersectionId) -> Option<&SlotAssignment> {
        self.pools.get(&ix)?.holders.get(&vehicle).map(|(a, _)| a)
    }

    pub fn holders(&self, ix: IntersectionId) -> impl Iterator<Item = &SlotAssignment> {
        self.pools
            .get(&ix)
            .into_iter()
            .flat_map(|p| p.holders.values().map(|(a, _)| a))
    }

    pub fn max_issued(&self, ix: IntersectionId) -> u32 {
        self.pools.get(&ix).map_or(0, |p| p.max_issued)
    }

    /// Issues a slot when the request is inside the time or distance trigger.
    ///
    /// The slot is one above every slot issued at the intersection since it
    /// was last empty, so later triggers always receive larger numbers. The
    /// targets are the current holders whose movement conflicts with the
    /// request's, plus the immediate preceding vehicle when it holds a slot.
    pub fn try_reserve(
        &mut self,
        req: &ReservationRequest,
        conflicts: impl Fn(LaneId, LaneId) -> bool,
        cfg: &ReservationConfig,
    ) -> Option<SlotAssignment> {
        if !(req.eta <= cfg.t_theta || req.distance <= cfg.d_theta) {
            return None;
        }
        let pool = self.pools.entry(req.intersection).or_default();
        if let Some((held, _)) = pool.holders.get(&req.vehicle) {
            return Some(held.clone());
        }
        let mut targets = BTreeSet::new();
        let mut conflicting_max = 0;
        for (id, (a, movement)) in &pool.holders {
            if conflicts(req.movement, *movement) || Some(*id) == req.preceding {
                targets.insert(*id);
                conflicting_max = conflicting_max.max(a.slot);
            }
        }
        let slot = conflicting_max.max(pool.max_issued) + 1;
        pool.max_issued = slot;
        let assignment = SlotAssignment {
            vehicle_id: req.vehicle,
            intersection: req.intersection,
            slot,
            target_ids: targets,
            immediate_preceding_id: req.preceding,
        };
        pool.holders
            .insert(req.vehicle, (assignment.clone(), req.movement));
        Some(assignment)
    }

    /// Clears a vehicle's slot once it leaves the intersection.
    pub fn release(
        &mut self,
        vehicle: VehicleId,
        ix: IntersectionId,
    ) -> Result<SlotAssignment, ReservationError> {
        let pool = self.pools.get_mut(&ix).ok_or(ReservationError::NotHeld {
            vehicle,
            intersection: ix,
        })?;
        let (a, _) = pool
            .holders
            .remove(&vehicle)
            .ok_or(ReservationError::NotHeld {
                vehicle,
                intersection: ix,
            })?;
        if pool.holders.is_empty() {
            pool.max_issued = 0;
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const IX: IntersectionId = IntersectionId(0);

    fn req(id: u32, movement: u32, eta: f64, d: f64) -> ReservationRequest {
        ReservationRequest {
            vehicle: VehicleId(id),
            intersection: IX,
            movement: LaneId(movement),
            eta,
            distance: d,
            preceding: None,
        }
    }

    fn all_conflict(_: LaneId, _: LaneId) -> bool {
        true
    }

    /// Time to cover `d` under the accelerate-then-cruise profile, 1 ms steps.
    fn integrate_eta(v0: f64, d: f64, v_lim: f64, a: f64) -> f64 {
        let dt = 1e-3;
        let (mut s, mut v, mut t) = (0.0, v0, 0.0);
        loop {
            let acc = if v < v_lim { a } else { 0.0 };
            let v_next = (v + acc * dt).min(v_lim);
            let ds = 0.5 * (v + v_next) * dt;
            if s + ds >= d {
                // exact sub-step fraction under constant acceleration within the step
                let frac = if acc > 0.0 && v_next < v_lim {
                    (-v + (v * v + 2.0 * acc * (d - s)).sqrt()) / acc
                } else {
                    (d - s) / (0.5 * (v + v_next))
                };
                return t + frac.min(dt);
            }
            s += ds;
            v = v_next;
            t += dt;
        }
    }

    #[test]
    fn cruise_eta() {
        assert_eq!(temp_eta(10.0, 100.0, 10.0, 2.0, 2.0).unwrap(), 10.0);
    }

    #[test]
    fn accelerating_profile_eta() {
        let t = temp_eta(5.0, 50.0, 50.0, 1.0, 1.0).unwrap();
        assert!((t - (125f64.sqrt() - 5.0)).abs() < 1e-12);
        assert!((t - integrate_eta(5.0, 50.0, 50.0, 1.0)).abs() < 1e-3);
    }

    #[test]
    fn capped_profile_eta() {
        let t = temp_eta(5.0, 100.0, 10.0, 1.0, 1.0).unwrap();
        assert_eq!(t, 11.25);
        assert!((t - integrate_eta(5.0, 100.0, 10.0, 1.0)).abs() < 1e-3);
    }

    #[test]
    fn stalled_vehicle() {
        assert_eq!(
            temp_eta(0.0, 10.0, 10.0, 0.0, 0.0),
            Err(ReservationError::StalledVehicle)
        );
    }

    #[test]
    fn final_eta_cases() {
        assert_eq!(final_eta(10.0, Some(9.5), 1.5), 11.0);
        assert_eq!(final_eta(10.0, None, 1.5), 10.0);
        assert_eq!(final_eta(12.0, Some(9.5), 1.5), 12.0);
    }

    #[test]
    fn first_vehicle_gets_slot_one() {
        let mut pool = SlotPool::new();
        let a = pool
            .try_reserve(
                &req(1, 0, 20.0, 40.0),
                all_conflict,
                &ReservationConfig::default(),
            )
            .unwrap();
        assert_eq!(a.slot, 1);
        assert!(a.target_ids.is_empty());
    }

    #[test]
    fn third_vehicle_follows_two_holders() {
        let mut pool = SlotPool::new();
        let cfg = ReservationConfig::default();
        pool.try_reserve(&req(1, 0, 5.0, 40.0), all_conflict, &cfg)
            .unwrap();
        pool.try_reserve(&req(2, 1, 5.0, 40.0), all_conflict, &cfg)
            .unwrap();
        let a = pool
            .try_reserve(&req(3, 2, 5.0, 40.0), all_conflict, &cfg)
            .unwrap();
        assert_eq!(a.slot, 3);
        assert_eq!(a.target_ids, BTreeSet::from([VehicleId(1), VehicleId(2)]));
    }

    #[test]
    fn outside_trigger_no_assignment() {
        let mut pool = SlotPool::new();
        let r = pool.try_reserve(
            &req(1, 0, 20.0, 200.0),
            all_conflict,
            &ReservationConfig::default(),
        );
        assert!(r.is_none());
    }

    #[test]
    fn preceding_is_target_without_path_conflict() {
        let mut pool = SlotPool::new();
        let cfg = ReservationConfig::default();
        let none = |_: LaneId, _: LaneId| false;
        pool.try_reserve(&req(1, 0, 5.0, 40.0), none, &cfg).unwrap();
        let mut r = req(2, 1, 6.0, 45.0);
        r.preceding = Some(VehicleId(1));
        let a = pool.try_reserve(&r, none, &cfg).unwrap();
        assert_eq!(a.target_ids, BTreeSet::from([VehicleId(1)]));
        assert_eq!(a.slot, 2);
    }

    #[test]
    fn release_keeps_order_and_rejects_double() {
        let mut pool = SlotPool::new();
        let cfg = ReservationConfig::default();
        pool.try_reserve(&req(1, 0, 5.0, 40.0), all_conflict, &cfg)
            .unwrap();
        pool.try_reserve(&req(2, 1, 5.0, 40.0), all_conflict, &cfg)
            .unwrap();
        pool.release(VehicleId(2), IX).unwrap();
        assert_eq!(pool.max_issued(IX), 2);
        let a = pool
            .try_reserve(&req(3, 2, 5.0, 40.0), all_conflict, &cfg)
            .unwrap();
        assert_eq!(a.slot, 3);
        assert!(matches!(
            pool.release(VehicleId(2), IX),
            Err(ReservationError::NotHeld { .. })
        ));
    }

    #[test]
    fn intersections_are_independent() {
        let mut pool = SlotPool::new();
        let cfg = ReservationConfig::default();
        for id in 1..=3 {
            pool.try_reserve(&req(id, id, 5.0, 40.0), all_conflict, &cfg)
                .unwrap();
        }
        pool.release(VehicleId(3), IX).unwrap();
        let mut next = req(3, 0, 5.0, 40.0);
        next.intersection = IntersectionId(1);
        assert_eq!(pool.try_reserve(&next, all_conflict, &cfg).unwrap().slot, 1);
        assert_eq!(pool.holders(IX).count(), 2);
    }

    #[test]
    fn same_tick_ties_break_by_id() {
        let mut reqs = vec![
            req(5, 0, 4.0, 30.0),
            req(2, 1, 4.0, 30.0),
            req(9, 2, 3.0, 30.0),
        ];
        order_requests(&mut reqs);
        let ids: Vec<u32> = reqs.iter().map(|r| r.vehicle.0).collect();
        assert_eq!(ids, vec![9, 2, 5]);
    }

    proptest! {
        #[test]
        fn eta_matches_integration(v in 0.0f64..20.0, d in 0.5f64..300.0, v_lim in 5.0f64..25.0, a in 0.5f64..3.0) {
            let t = temp_eta(v, d, v_lim, a, a).unwrap();
            prop_assume!(v > 0.0 || d > 0.0);
            let oracle = if v >= v_lim { d / v } else { integrate_eta(v, d, v_lim, a) };
            prop_assert!((t - oracle).abs() < 1e-3, "t={} oracle={}", t, oracle);
        }

        #[test]
        fn boundary_branches_agree(v in 0.0f64..15.0, extra in 0.5f64..15.0, a in 0.5f64..3.0) {
            let v_lim = v + extra;
            let d = (v_lim * v_lim - v * v) / (2.0 * a);
            let p1 = (-v + (v * v + 2.0 * a * d).sqrt()) / a;
            let p2 = (2.0 * a * d + (v_lim - v).powi(2)) / (2.0 * a * v_lim);
            prop_assert!((p1 - p2).abs() < 1e-9);
        }

        #[test]
        fn slots_unique_and_monotone(n in 1usize..30, releases in proptest::collection::vec(0usize..30, 0..10)) {
            let mut pool = SlotPool::new();
            let cfg = ReservationConfig::default();
            let mut last = 0;
            for i in 0..n {
                if releases.contains(&i) && i > 0 {
                    let _ = pool.release(VehicleId(i as u32 - 1), IX);
                }
                let a = pool.try_reserve(&req(i as u32, (i % 12) as u32, 5.0, 40.0), |x, y| x != y, &cfg).unwrap();
                if pool.holders(IX).count() > 1 {
                    prop_assert!(a.slot > last);
                }
                last = a.slot;
                let slots: BTreeSet<u32> = pool.holders(IX).map(|h| h.slot).collect();
                prop_assert_eq!(slots.len(), pool.holders(IX).count());
                for t in &a.target_ids {
                    prop_assert!(pool.assignment(*t, IX).unwrap().slot < a.slot);
                }
            }
        }
    }
}
