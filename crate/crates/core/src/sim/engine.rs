//! The simulation world and its fixed-step update.

use super::metrics::{tractive_power, Aggregates, OccupancyLog, StopCounter, Summary, VehicleRecord, Violation};
use super::scenario::{Mode, ScenarioConfig, ScenarioError};
use super::signal::{must_go, signal_stop_accel, stop_at_bar_accel, SignalController};
use super::snapshot::{SignalView, SlotView, Snapshot, VehicleView};
use super::spawn::{build_schedule, route, SpawnRequest};
use super::trace::{TraceRow, TRACE_HEADER};
use super::vehicle::{Beacon, PathConflict, TargetLink, Vehicle};
use super::{mix_seed, PedalInput, Role};
use crate::channel::{Channel, ChannelConfig};
use crate::control::{
    consensus_accel, free_flow_accel, interaction_accel, lookup_gains, select_control, AxisState, TargetView,
    TimeGapPolicy,
};
use crate::estimation::{
    compensate_estimate, estimate_follower, estimate_leader, query_estimate, EstimateSample, TrajectoryEstimate,
};
use crate::hmi::{adjust_slot, available_slots, project_slot, CameraModel, EgoSlotView, TargetDims};
use crate::plant::{actuate, step_plant, PlantState};
use crate::reservation::{final_eta, order_requests, temp_eta, ReservationRequest, SlotPool};
use crate::world::{ConflictKind, IntersectionId, LaneGraph, LaneId, Leg, PathPlan, WorldError};
use crate::VehicleId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

/// Range scanned for a physical leader, m.
const LEADER_LOOKAHEAD: f64 = 150.0;
/// Vehicles needing more than this to stop at the bar are committed when an all-way stop begins, m/s².
const COMMIT_DECEL: f64 = 4.5;
/// Ticks between speed-distance samples.
const SERIES_DECIMATION: u64 = 10;
/// Horizon of the green-slot envelope, s.
const ENVELOPE_HORIZON: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("map: {0}")]
    World(#[from] WorldError),
    #[error("scenario has no driven vehicle")]
    NoEgo,
}

/// One all-way-stop episode at an intersection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailSafeEvent {
    pub intersection: u32,
    pub start: f64,
    pub end: Option<f64>,
    /// Vehicles required to stop at the bar.
    pub must_stop: Vec<VehicleId>,
    /// Vehicles observed at rest before their bar.
    pub stopped: Vec<VehicleId>,
    /// Vehicles released through the intersection, in order.
    pub served: Vec<VehicleId>,
    /// Vehicles that entered without stopping and without permission.
    pub violations: Vec<VehicleId>,
}

#[derive(Clone, Debug, Default)]
struct AllWayStop {
    active: bool,
    event: usize,
    must_stop: BTreeSet<VehicleId>,
    committed: BTreeSet<VehicleId>,
    queue: Vec<VehicleId>,
    permitted: BTreeSet<VehicleId>,
    last_release: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub summary: Summary,
    /// Trace CSV when recording was enabled.
    pub trace: Option<String>,
    /// Speed-distance CSV when recording was enabled.
    pub series: Option<String>,
    pub failsafe: Vec<FailSafeEvent>,
    /// (sent, dropped) channel message counts.
    pub channel_counts: (u64, u64),
}

/// Occupant of a lane: (vehicle, rear and front relative to the lane start, speed).
type LaneOccupant = (VehicleId, f64, f64, f64);

pub struct Simulation {
    cfg: ScenarioConfig,
    graph: LaneGraph,
    signals: Option<SignalController>,
    schedule: Vec<SpawnRequest>,
    next_spawn: usize,
    waiting: BTreeMap<LaneId, VecDeque<SpawnRequest>>,
    vehicles: BTreeMap<VehicleId, Vehicle>,
    finished: Vec<VehicleRecord>,
    channel: Channel<Beacon>,
    pool: SlotPool,
    allway: BTreeMap<IntersectionId, AllWayStop>,
    fs_events: Vec<FailSafeEvent>,
    occupancy: OccupancyLog,
    violations: Vec<Violation>,
    collided: BTreeSet<(VehicleId, VehicleId)>,
    tick: u64,
    ego_pedal: PedalInput,
    pending_input: Option<PedalInput>,
    estimator_calls: u64,
    max_est_err: f64,
    trace: Option<String>,
    series: Option<String>,
    spawned: usize,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let graph = cfg.corridor.build()?;
        let channel_cfg = ChannelConfig {
            rng_seed: mix_seed(cfg.seed, cfg.channel.rng_seed),
            ..cfg.channel.clone()
        };
        let channel = Channel::new(channel_cfg).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let signals = match cfg.mode {
            Mode::Signalized => cfg.signal.clone().map(SignalController::new),
            Mode::Cooperative => None,
        };
        let schedule = build_schedule(&cfg);
        Ok(Self {
            graph,
            signals,
            schedule,
            next_spawn: 0,
            waiting: BTreeMap::new(),
            vehicles: BTreeMap::new(),
            finished: Vec::new(),
            channel,
            pool: SlotPool::new(),
            allway: BTreeMap::new(),
            fs_events: Vec::new(),
            occupancy: OccupancyLog::default(),
            violations: Vec::new(),
            collided: BTreeSet::new(),
            tick: 0,
            ego_pedal: PedalInput::default(),
            pending_input: None,
            estimator_calls: 0,
            max_est_err: 0.0,
            trace: None,
            series: None,
            spawned: 0,
            cfg,
        })
    }

    /// Records the per-tick trace CSV.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(format!("{TRACE_HEADER}\n"));
        self
    }

    /// Records per-vehicle speed against travelled distance.
    pub fn with_series(mut self) -> Self {
        self.series = Some("mode,vehicle_id,t,distance,v\n".to_string());
        self
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &LaneGraph {
        &self.graph
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.dt_sim
    }

    pub fn finished(&self) -> bool {
        self.tick >= self.cfg.ticks()
    }

    pub fn active_count(&self) -> usize {
        self.vehicles.len()
    }

    pub fn spawned_count(&self) -> usize {
        self.spawned
    }

    pub fn exited_count(&self) -> usize {
        self.finished.len()
    }

    pub fn estimator_calls(&self) -> u64 {
        self.estimator_calls
    }

    /// State and last reference acceleration of a live vehicle.
    pub fn vehicle_state(&self, id: VehicleId) -> Option<(PlantState, f64)> {
        self.vehicles.get(&id).map(|v| (v.state, v.a_ref))
    }

    pub fn vehicle_ids(&self) -> Vec<VehicleId> {
        self.vehicles.keys().copied().collect()
    }

    pub fn ego_id(&self) -> Option<VehicleId> {
        self.cfg.hitl.map(|_| VehicleId(0))
    }

    pub fn failsafe_active(&self, ix: IntersectionId) -> bool {
        self.allway.get(&ix).is_some_and(|s| s.active)
    }

    /// Queues pedal input for the driven vehicle; it takes effect at the next tick.
    pub fn set_input(&mut self, input: PedalInput) -> Result<(), SimError> {
        if self.cfg.hitl.is_none() {
            return Err(SimError::NoEgo);
        }
        self.pending_input = Some(input.clamped().0);
        Ok(())
    }

    /// Runs every remaining tick.
    pub fn run(mut self) -> RunResult {
        while !self.finished() {
            self.step();
        }
        self.into_result()
    }

    pub fn step(&mut self) {
        let t = self.time();
        if let Some(p) = self.pending_input.take() {
            self.ego_pedal = p;
        }
        self.spawn(t);
        self.poll_channel(t);
        self.channel.update_links(t);
        self.update_failsafe(t);
        self.refresh_estimates(t);
        self.reserve(t);
        self.control(t);
        self.advance_plants();
        self.tick += 1;
        let now = self.time();
        self.post_step(now);
        self.broadcast(now);
        self.record(now);
    }

    fn spawn(&mut self, t: f64) {
        while let Some(req) = self.schedule.get(self.next_spawn) {
            if req.time > t + 1e-9 {
                break;
            }
            let ix = &self.graph.intersections()[req.entry.intersection];
            let lane = ix.approaches[req.entry.leg.index()];
            self.waiting.entry(lane).or_default().push_back(*req);
            self.next_spawn += 1;
        }
        let lanes: Vec<LaneId> = self.waiting.keys().copied().collect();
        for lane in lanes {
            let clear = self
                .vehicles
                .values()
                .all(|v| v.plan.lanes[0] != lane || v.rear() >= self.cfg.spawn.min_headway);
            if !clear {
                continue;
            }
            let Some(req) = self.waiting.get_mut(&lane).and_then(|q| q.pop_front()) else {
                continue;
            };
            match self.make_vehicle(&req, t) {
                Ok(v) => {
                    self.vehicles.insert(v.id, v);
                    self.spawned += 1;
                }
                Err(e) => log::warn!("spawn of {} failed: {e}", req.id),
            }
        }
    }

    fn make_vehicle(&self, req: &SpawnRequest, t: f64) -> Result<Vehicle, WorldError> {
        let lanes = route(&self.graph, req.entry, req.turn)?;
        let mut plan = PathPlan::from_lanes(lanes, &self.graph)?;
        plan.vehicle_id = req.id;
        let conflicts = self.path_conflicts(&plan)?;
        let v0 = self.cfg.spawn.initial_speed_ratio * self.cfg.corridor.speed_limit;
        let leg = format!("{:?}", req.entry.leg).to_lowercase();
        Ok(Vehicle {
            id: req.id,
            role: req.role,
            entry_label: format!("{}-{leg}-{:?}", req.entry.intersection, req.turn).to_lowercase(),
            plan,
            params: self.cfg.plant,
            state: PlantState { s: 0.0, v: v0, a: 0.0 },
            a_ref: 0.0,
            spawn_time: t,
            spawn_tick: self.tick,
            links: Vec::new(),
            slots: BTreeMap::new(),
            own_estimate: None,
            stops: StopCounter::default(),
            energy: 0.0,
            min_speed: v0,
            conflicts,
            est_err: None,
        })
    }

    fn path_conflicts(&self, plan: &PathPlan) -> Result<Vec<PathConflict>, WorldError> {
        let mut out = Vec::new();
        for c in &plan.crossings {
            let table = self.graph.conflict_table(c.intersection)?;
            for (i, p) in table.points().iter().enumerate() {
                if p.kind != ConflictKind::Crossing {
                    continue;
                }
                if let Some(off) = p.offset(c.movement) {
                    out.push(PathConflict {
                        key: (c.intersection, i),
                        s: c.entry_s + off,
                    });
                }
            }
        }
        Ok(out)
    }

    fn poll_channel(&mut self, t: f64) {
        for v in self.vehicles.values_mut() {
            for msg in self.channel.poll(v.id, t) {
                for link in v.links.iter_mut().filter(|l| l.target == msg.sender) {
                    link.fresh = Some(msg.payload.clone());
                }
            }
        }
    }

    /// Estimation refresh instants falling in this tick: multiples of dt_pred in (t - dt_sim, t].
    fn refresh_instants(&self, t: f64) -> Vec<f64> {
        let dp = self.cfg.estimator.dt_pred;
        let k_hi = (t / dp + 1e-9).floor() as i64;
        let k_lo = if self.tick == 0 {
            0
        } else {
            (((t - self.cfg.dt_sim) / dp + 1e-9).floor() as i64 + 1).max(0)
        };
        (k_lo..=k_hi).map(|k| k as f64 * dp).collect()
    }

    fn refresh_estimates(&mut self, t: f64) {
        for r in self.refresh_instants(t) {
            self.refresh_at(r, t);
        }
    }

    /// Compensates newly delivered target estimates to `r`, then rebuilds every
    /// vehicle's own estimate from its state extrapolated to `r`.
    fn refresh_at(&mut self, r: f64, t: f64) {
        let est_cfg = self.cfg.estimator;
        let limits = self.cfg.control.limits;
        let blocked = self.stop_controlled();
        for v in self.vehicles.values_mut() {
            for link in &mut v.links {
                if let Some(b) = link.fresh.take() {
                    let est = match &b.estimate {
                        Some(e) => (**e).clone(),
                        None => estimate_leader(link.target, b.sent_at, b.state.v, b.state.s, &est_cfg),
                    };
                    let tau = (r - est.origin_time).max(0.0);
                    link.compensated = Some(compensate_estimate(&est, tau, r, &est_cfg));
                }
            }
            let dtr = r - t;
            let seed = EstimateSample {
                v: (v.state.v + v.state.a * dtr).max(0.0),
                d: v.state.s + v.state.v * dtr,
            };
            let mut binding: Option<(f64, &TargetLink, TrajectoryEstimate)> = None;
            if v.role == Role::NpcCav {
                for link in &v.links {
                    if blocked.contains(&(v.id, link.intersection)) {
                        continue;
                    }
                    let Some(c) = &link.compensated else { continue };
                    let Ok(aligned) = c.rebased(r) else { continue };
                    let tgt = aligned.sample(0);
                    let ego = AxisState { s: link.ego_axis(seed.d), v: seed.v };
                    let target = AxisState { s: tgt.d - link.target_point, v: tgt.v };
                    let Ok(a) = consensus_accel(ego, target, &link.gains, &link.policy, &limits) else {
                        continue;
                    };
                    if binding.as_ref().is_none_or(|(best, _, _)| a < *best) {
                        binding = Some((a, link, aligned));
                    }
                }
            }
            let est = match binding {
                Some((_, link, aligned)) => {
                    let axis_target = aligned.shifted(-link.target_point);
                    let axis_seed = EstimateSample { v: seed.v, d: link.ego_axis(seed.d) };
                    estimate_follower(v.id, axis_seed, &axis_target, &link.gains, &link.policy, Some(&limits), &est_cfg)
                        .shifted(link.ego_point)
                }
                None => estimate_leader(v.id, r, seed.v, seed.d, &est_cfg),
            };
            v.own_estimate = Some(Arc::new(est));
        }
        self.estimator_calls += self.vehicles.len() as u64;
    }

    /// (vehicle, intersection) pairs under the all-way-stop law instead of consensus.
    fn stop_controlled(&self) -> BTreeSet<(VehicleId, IntersectionId)> {
        let mut out = BTreeSet::new();
        for (ix, st) in &self.allway {
            if st.active {
                for id in st.must_stop.iter().chain(&st.permitted) {
                    out.insert((*id, *ix));
                }
            }
        }
        out
    }

    fn update_failsafe(&mut self, t: f64) {
        let ixs: Vec<IntersectionId> = self.graph.intersections().iter().map(|i| i.id).collect();
        let d_theta = self.cfg.reservation.d_theta;
        let fs = self.cfg.fail_safe.clone();
        for ix in ixs {
            let trigger = self.vehicles.values().any(|v| {
                v.links.iter().any(|l| {
                    l.intersection == ix
                        && self
                            .channel
                            .link(l.target, v.id)
                            .is_some_and(|s| s.failsafe_active)
                })
            });
            let mut st = self.allway.remove(&ix).unwrap_or_default();
            if trigger && !st.active {
                st = AllWayStop {
                    active: true,
                    event: self.fs_events.len(),
                    ..AllWayStop::default()
                };
                for v in self.vehicles.values() {
                    let Some(c) = v.plan.crossing(ix) else { continue };
                    if v.rear() >= c.exit_s {
                        continue;
                    }
                    let d = c.entry_s - v.state.s;
                    if d <= 0.0 || v.state.v * v.state.v / (2.0 * (d - 0.3).max(0.01)) > COMMIT_DECEL {
                        st.committed.insert(v.id);
                    }
                }
                log::info!("intersection {} enters all-way stop at {t:.2}", ix.0);
                self.fs_events.push(FailSafeEvent {
                    intersection: ix.0,
                    start: t,
                    end: None,
                    must_stop: Vec::new(),
                    stopped: Vec::new(),
                    served: Vec::new(),
                    violations: Vec::new(),
                });
            }
            if st.active {
                let ev = &mut self.fs_events[st.event];
                if trigger {
                    for v in self.vehicles.values() {
                        let Some(c) = v.approaching() else { continue };
                        if c.intersection == ix
                            && !st.committed.contains(&v.id)
                            && c.entry_s - v.state.s <= d_theta
                            && st.must_stop.insert(v.id)
                        {
                            ev.must_stop.push(v.id);
                        }
                    }
                }
                for id in &st.must_stop {
                    if st.permitted.contains(id) {
                        continue;
                    }
                    let Some(v) = self.vehicles.get(id) else { continue };
                    let Some(c) = v.plan.crossing(ix) else { continue };
                    let d = c.entry_s - v.state.s;
                    let at_rest = v.state.v < super::metrics::STOP_SPEED;
                    if d > 0.0 && at_rest && !ev.stopped.contains(id) {
                        ev.stopped.push(*id);
                    }
                    if d > 0.0 && d < fs.release_distance && at_rest && !st.queue.contains(id) {
                        st.queue.push(*id);
                    }
                    if d <= 0.0 && !ev.violations.contains(id) {
                        ev.violations.push(*id);
                    }
                }
                st.committed.retain(|id| {
                    self.vehicles
                        .get(id)
                        .is_some_and(|v| v.plan.crossing(ix).is_some_and(|c| v.rear() < c.exit_s))
                });
                let busy = self.vehicles.values().any(|v| {
                    v.plan.crossing(ix).is_some_and(|c| {
                        v.in_box(c)
                            || ((st.permitted.contains(&v.id) || st.committed.contains(&v.id)) && v.rear() < c.exit_s)
                    })
                });
                let gap_ok = st.last_release.is_none_or(|lr| t - lr >= fs.service_gap - 1e-9);
                if !busy && gap_ok && !st.queue.is_empty() {
                    let id = st.queue.remove(0);
                    st.permitted.insert(id);
                    ev.served.push(id);
                    st.last_release = Some(t);
                }
                let drained = st
                    .must_stop
                    .iter()
                    .all(|id| st.permitted.contains(id) || !self.vehicles.contains_key(id));
                if !trigger && drained {
                    ev.end = Some(t);
                    log::info!("intersection {} leaves all-way stop at {t:.2}", ix.0);
                    st = AllWayStop::default();
                }
            }
            self.allway.insert(ix, st);
        }
    }

    fn approach_leg(&self, movement: LaneId) -> Leg {
        self.graph
            .lane(movement)
            .ok()
            .and_then(|l| l.movement)
            .map_or(Leg::South, |m| m.from)
    }

    /// Closest vehicle ahead on the same approach lane that has not entered the intersection.
    fn preceding(&self, v: &Vehicle, movement: LaneId) -> Option<VehicleId> {
        let i = v.plan.lanes.iter().position(|l| *l == movement)?;
        if i == 0 {
            return None;
        }
        let lane = v.plan.lanes[i - 1];
        let mine = v.state.s - v.plan.lane_starts[i - 1];
        self.vehicles
            .values()
            .filter(|o| o.id != v.id)
            .filter_map(|o| {
                let j = o.plan.lane_index_at(o.state.s);
                if o.plan.lanes[j] != lane {
                    return None;
                }
                let local = o.state.s - o.plan.lane_starts[j];
                (local > mine).then_some((local, o.id))
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|x| x.1)
    }

    fn reserve(&mut self, t: f64) {
        let rc = self.cfg.reservation;
        let v_lim = self.cfg.corridor.speed_limit;
        let idm = self.cfg.control.idm;
        let mut reqs = Vec::new();
        for v in self.vehicles.values() {
            let Some(c) = v.approaching() else { continue };
            let ix = c.intersection;
            if v.slots.contains_key(&ix) {
                continue;
            }
            let d = c.entry_s - v.state.s;
            let Ok(t_temp) = temp_eta(v.state.v, d, v_lim, rc.a_pref, rc.a_max) else {
                continue;
            };
            let preceding = self.preceding(v, c.movement);
            let mut preceding_eta = None;
            if let Some(p) = preceding {
                let pv = &self.vehicles[&p];
                if !pv.slots.contains_key(&ix) {
                    continue;
                }
                preceding_eta = pv.plan.crossing(ix).and_then(|pc| {
                    temp_eta(pv.state.v, (pc.entry_s - pv.state.s).max(0.0), v_lim, rc.a_pref, rc.a_max).ok()
                });
            }
            if let Some(sig) = &self.signals {
                let aspect = sig.aspect(ix.0 as usize, self.approach_leg(c.movement), t);
                if !must_go(v.state.v, d, aspect, &idm) {
                    continue;
                }
            }
            reqs.push(ReservationRequest {
                vehicle: v.id,
                intersection: ix,
                movement: c.movement,
                eta: final_eta(t_temp, preceding_eta, rc.t_headway),
                distance: d,
                preceding,
            });
        }
        order_requests(&mut reqs);
        for req in reqs {
            let Ok(table) = self.graph.conflict_table(req.intersection) else { continue };
            let Some(a) = self
                .pool
                .try_reserve(&req, |x, y| x == y || table.conflicts(x, y), &rc)
            else {
                continue;
            };
            let links: Vec<TargetLink> = a
                .target_ids
                .iter()
                .filter_map(|j| self.make_link(req.vehicle, *j, req.intersection))
                .collect();
            for l in &links {
                self.channel.open_link(l.target, req.vehicle, t);
            }
            let v = self.vehicles.get_mut(&req.vehicle).expect("requesting vehicle exists");
            v.slots.insert(req.intersection, a.slot);
            v.links.extend(links);
        }
    }

    fn make_link(&self, ego: VehicleId, target: VehicleId, ix: IntersectionId) -> Option<TargetLink> {
        let e = self.vehicles.get(&ego)?;
        let j = self.vehicles.get(&target)?;
        let ce = e.plan.crossing(ix)?;
        let cj = j.plan.crossing(ix)?;
        let (ego_point, target_point) = if ce.movement == cj.movement {
            (ce.exit_s, cj.exit_s)
        } else {
            let rel = self.graph.conflict_table(ix).ok()?.pair(ce.movement, cj.movement)?;
            (ce.entry_s + rel.offset_a, cj.entry_s + rel.offset_b)
        };
        if e.state.s >= ego_point {
            return None;
        }
        let gap0 = ((j.state.s - target_point) - (e.state.s - ego_point)).abs();
        let ctl = &self.cfg.control;
        Some(TargetLink {
            target,
            intersection: ix,
            ego_point,
            target_point,
            gains: lookup_gains(e.state.v, j.state.v, gap0, &ctl.gains),
            policy: TimeGapPolicy {
                t_gap: ctl.t_gap,
                l_target: j.length() + ctl.clearance,
            },
            target_length: j.length(),
            target_width: j.params.width,
            fresh: None,
            compensated: None,
        })
    }

    fn lane_index(&self) -> BTreeMap<LaneId, Vec<LaneOccupant>> {
        let mut out: BTreeMap<LaneId, Vec<LaneOccupant>> = BTreeMap::new();
        for v in self.vehicles.values() {
            let i0 = v.plan.lane_index_at(v.rear().max(0.0));
            let i1 = v.plan.lane_index_at(v.state.s);
            for i in i0..=i1 {
                let start = v.plan.lane_starts[i];
                out.entry(v.plan.lanes[i])
                    .or_default()
                    .push((v.id, v.rear() - start, v.state.s - start, v.state.v));
            }
        }
        out
    }

    /// Nearest vehicle physically ahead on the path: (id, bumper gap, speed).
    fn leader(&self, v: &Vehicle, index: &BTreeMap<LaneId, Vec<LaneOccupant>>) -> Option<(VehicleId, f64, f64)> {
        let mut best: Option<(VehicleId, f64, f64)> = None;
        for i in v.plan.lane_index_at(v.state.s)..v.plan.lanes.len() {
            let start = v.plan.lane_starts[i];
            if start > v.state.s + LEADER_LOOKAHEAD {
                break;
            }
            for (id, rear, front, speed) in index.get(&v.plan.lanes[i]).into_iter().flatten() {
                if *id == v.id || start + front <= v.state.s {
                    continue;
                }
                let gap = start + rear - v.state.s;
                if best.is_none_or(|b| gap < b.1) {
                    best = Some((*id, gap, *speed));
                }
            }
        }
        best
    }

    fn control(&mut self, t: f64) {
        let index = self.lane_index();
        let states: BTreeMap<VehicleId, PlantState> = self.vehicles.iter().map(|(id, v)| (*id, v.state)).collect();
        let blocked = self.stop_controlled();
        let limits = self.cfg.control.limits;
        let idm = self.cfg.control.idm;
        let v_lim = self.cfg.corridor.speed_limit;
        let mut releases = Vec::new();
        let mut updates = Vec::with_capacity(self.vehicles.len());
        for v in self.vehicles.values() {
            let mut err: Option<f64> = None;
            let mut views = Vec::new();
            for link in &v.links {
                let Some(c) = &link.compensated else { continue };
                let Ok(sm) = query_estimate(c, t) else { continue };
                if let Some(ts) = states.get(&link.target) {
                    let e = (sm.d - ts.s).abs();
                    err = Some(err.map_or(e, |x| x.max(e)));
                }
                if blocked.contains(&(v.id, link.intersection)) {
                    continue;
                }
                views.push(TargetView {
                    id: link.target,
                    ego: AxisState {
                        s: link.ego_axis(v.state.s),
                        v: v.state.v,
                    },
                    target: Some(AxisState {
                        s: sm.d - link.target_point,
                        v: sm.v,
                    }),
                    gains: link.gains,
                    policy: link.policy,
                });
            }
            if v.role == Role::HitlEgo {
                updates.push((v.id, limits.clamp(self.ego_pedal.to_accel(&limits)), err));
                continue;
            }
            let ff = free_flow_accel(v.state.v, v_lim, idm.a_max, idm.sigma);
            let mut a = select_control(ff, &views, &limits).unwrap_or(ff).min(ff);
            if let Some((_, gap, v_lead)) = self.leader(v, &index) {
                a = a.min(interaction_accel(v.state.v, gap, v.state.v - v_lead, &idm));
            }
            if let Some(c) = v.approaching() {
                let d_bar = c.entry_s - v.state.s;
                let ix = c.intersection;
                if let Some(sig) = &self.signals {
                    let aspect = sig.aspect(ix.0 as usize, self.approach_leg(c.movement), t);
                    a = a.min(signal_stop_accel(v.state.v, v_lim, d_bar, aspect, &idm));
                    if !must_go(v.state.v, d_bar, aspect, &idm) && v.slots.contains_key(&ix) {
                        releases.push((v.id, ix));
                    }
                }
                if let Some(st) = self.allway.get(&ix) {
                    if st.active && !st.committed.contains(&v.id) && !st.permitted.contains(&v.id) {
                        a = a.min(stop_at_bar_accel(v.state.v, d_bar, &idm));
                    }
                }
            }
            updates.push((v.id, limits.clamp(a), err));
        }
        for (id, a, err) in updates {
            let v = self.vehicles.get_mut(&id).expect("vehicle exists");
            v.a_ref = a;
            v.est_err = err;
            if let Some(e) = err {
                self.max_est_err = self.max_est_err.max(e);
            }
        }
        for (id, ix) in releases {
            self.release(id, ix);
        }
    }

    /// Frees a slot and every consensus link that depended on it.
    fn release(&mut self, id: VehicleId, ix: IntersectionId) {
        if self.pool.release(id, ix).is_err() {
            return;
        }
        if let Some(v) = self.vehicles.get_mut(&id) {
            v.slots.remove(&ix);
            let dropped: Vec<VehicleId> = v.links.iter().filter(|l| l.intersection == ix).map(|l| l.target).collect();
            v.links.retain(|l| l.intersection != ix);
            for tgt in dropped {
                if !v.links.iter().any(|l| l.target == tgt) {
                    self.channel.close_link(tgt, id);
                }
            }
        }
        for other in self.vehicles.values_mut() {
            let before = other.links.len();
            other.links.retain(|l| !(l.target == id && l.intersection == ix));
            if before != other.links.len() && !other.links.iter().any(|l| l.target == id) {
                self.channel.close_link(id, other.id);
            }
        }
    }

    fn advance_plants(&mut self) {
        let dt = self.cfg.dt_sim;
        for v in self.vehicles.values_mut() {
            let (f, tb) = actuate(v.a_ref, v.state.v, &v.params);
            let prev_v = v.state.v;
            v.state = step_plant(v.state, f, tb, dt, &v.params).expect("positive step and exclusive actuation");
            v.energy += tractive_power(prev_v, v.state.a, &v.params) * dt;
        }
    }

    fn post_step(&mut self, now: f64) {
        for v in self.vehicles.values_mut() {
            v.stops.observe(now, v.state.v);
            v.min_speed = v.min_speed.min(v.state.v);
            let s = v.state.s;
            let passed: Vec<VehicleId> = v.links.iter().filter(|l| s > l.ego_point).map(|l| l.target).collect();
            if !passed.is_empty() {
                v.links.retain(|l| s <= l.ego_point);
                for tgt in passed {
                    if !v.links.iter().any(|l| l.target == tgt) {
                        self.channel.close_link(tgt, v.id);
                    }
                }
            }
        }
        let mut exits_box = Vec::new();
        for v in self.vehicles.values() {
            for ix in v.slots.keys() {
                if v.plan.crossing(*ix).is_some_and(|c| v.rear() >= c.exit_s) {
                    exits_box.push((v.id, *ix));
                }
            }
        }
        for (id, ix) in exits_box {
            self.release(id, ix);
        }

        let half_w = self.cfg.plant.width / 2.0;
        for v in self.vehicles.values() {
            for pc in &v.conflicts {
                let inside = v.state.s >= pc.s - half_w && v.state.s <= pc.s + v.length() + half_w;
                if inside {
                    for other in self.occupancy.occupy(pc.key, v.id, now) {
                        log::warn!("vehicles {} and {} share a conflict point at {now:.2}", v.id, other);
                        self.violations.push(Violation::Overlap {
                            intersection: pc.key.0,
                            point: pc.key.1,
                            a: other,
                            b: v.id,
                            t: now,
                        });
                    }
                } else if self.occupancy.is_occupying(pc.key, v.id) {
                    self.occupancy.vacate(pc.key, v.id, now);
                }
            }
        }

        let index = self.lane_index();
        for v in self.vehicles.values() {
            if let Some((lead, gap, _)) = self.leader(v, &index) {
                if gap < 0.0 && self.collided.insert((v.id, lead)) {
                    log::warn!("vehicle {} overlaps its leader {lead} by {:.2} m at {now:.2}", v.id, -gap);
                    self.violations.push(Violation::Collision {
                        follower: v.id,
                        leader: lead,
                        gap,
                        t: now,
                    });
                }
            }
        }

        let done: Vec<VehicleId> = self
            .vehicles
            .values()
            .filter(|v| v.state.s >= v.plan.total_length())
            .map(|v| v.id)
            .collect();
        for id in done {
            let held: Vec<IntersectionId> = self.vehicles[&id].slots.keys().copied().collect();
            for ix in held {
                self.release(id, ix);
            }
            let v = self.vehicles.remove(&id).expect("exiting vehicle exists");
            self.channel.remove_vehicle(id);
            for other in self.vehicles.values_mut() {
                other.links.retain(|l| l.target != id);
            }
            self.finished.push(self.record_of(&v, Some(self.tick)));
        }
    }

    fn record_of(&self, v: &Vehicle, exit_tick: Option<u64>) -> VehicleRecord {
        let dt = self.cfg.dt_sim;
        VehicleRecord {
            id: v.id,
            role: v.role.as_str().into(),
            entry: v.entry_label.clone(),
            spawn_time: v.spawn_time,
            exit_time: exit_tick.map(|k| k as f64 * dt),
            travel_time: exit_tick.map(|k| (k - v.spawn_tick) as f64 * dt),
            distance: v.state.s.min(v.plan.total_length()),
            stops: v.stops.stops,
            energy: v.energy,
            min_speed: v.min_speed,
        }
    }

    fn broadcast(&mut self, now: f64) {
        let mut subs: BTreeMap<VehicleId, BTreeSet<VehicleId>> = BTreeMap::new();
        for v in self.vehicles.values() {
            for l in &v.links {
                subs.entry(l.target).or_default().insert(v.id);
            }
        }
        for (sender, receivers) in subs {
            let Some(s) = self.vehicles.get(&sender) else { continue };
            let beacon = Beacon {
                state: s.state,
                sent_at: now,
                estimate: s.own_estimate.clone(),
            };
            for r in receivers {
                self.channel.send(sender, r, now, beacon.clone());
            }
        }
    }

    fn record(&mut self, now: f64) {
        let mode = self.cfg.mode.as_str();
        if let Some(out) = &mut self.trace {
            for v in self.vehicles.values() {
                let p = v.plan.point_at(v.state.s);
                let cur = v.current_crossing();
                TraceRow {
                    t: now,
                    vehicle_id: v.id.0,
                    role: v.role.as_str(),
                    s: v.state.s,
                    x: p.x,
                    y: p.y,
                    v: v.state.v,
                    a: v.state.a,
                    slot: cur.and_then(|c| v.slots.get(&c.intersection).copied()),
                    intersection: cur.map(|c| c.intersection.0),
                    est_err: v.est_err,
                    mode,
                }
                .write_csv(out);
            }
        }
        if self.tick % SERIES_DECIMATION == 0 {
            if let Some(out) = &mut self.series {
                for v in self.vehicles.values() {
                    let _ = writeln!(out, "{mode},{},{now:.2},{:.3},{:.4}", v.id, v.state.s, v.state.v);
                }
            }
        }
    }

    pub fn failsafe_events(&self) -> &[FailSafeEvent] {
        &self.fs_events
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    /// Current view for telemetry clients.
    pub fn snapshot(&self, paused: bool) -> Snapshot {
        let t = self.time();
        let vehicles = self
            .vehicles
            .values()
            .map(|v| {
                let p = v.plan.point_at(v.state.s);
                let cur = v.current_crossing();
                VehicleView {
                    id: v.id,
                    role: v.role,
                    x: p.x,
                    y: p.y,
                    heading: v.plan.heading_at(v.state.s),
                    v: v.state.v,
                    a: v.state.a,
                    slot: cur.and_then(|c| v.slots.get(&c.intersection).copied()),
                    intersection: cur.map(|c| c.intersection.0),
                }
            })
            .collect();
        let camera_vehicle = self
            .ego_id()
            .filter(|id| self.vehicles.contains_key(id))
            .or_else(|| self.vehicles.keys().next().copied());
        let slots = camera_vehicle
            .and_then(|id| self.vehicles.get(&id))
            .map(|v| self.camera_slots(v))
            .unwrap_or_default();
        let signals = self
            .signals
            .as_ref()
            .map(|sig| {
                (0..self.graph.intersections().len())
                    .map(|k| SignalView {
                        intersection: k as u32,
                        east_west: sig.aspect(k, Leg::East, t),
                        north_south: sig.aspect(k, Leg::North, t),
                    })
                    .collect()
            })
            .unwrap_or_default();
        Snapshot {
            tick: self.tick,
            sim_time: t,
            mode: self.cfg.mode,
            paused,
            camera_vehicle,
            image_size: [self.cfg.camera.image_width, self.cfg.camera.image_height],
            vehicles,
            slots,
            signals,
            failsafe: self.allway.iter().filter(|(_, s)| s.active).map(|(ix, _)| ix.0).collect(),
        }
    }

    /// Red boxes for every consensus target plus the green gaps between them,
    /// projected into the vehicle's camera.
    fn camera_slots(&self, v: &Vehicle) -> Vec<SlotView> {
        let t = self.time();
        let s = v.state.s;
        let Ok(cam) = CameraModel::mounted(v.plan.point_at(s), v.plan.heading_at(s), &self.cfg.camera) else {
            return Vec::new();
        };
        let ctl = &self.cfg.control;
        let mut reds = Vec::new();
        for link in &v.links {
            let Some(c) = &link.compensated else { continue };
            let Ok(sm) = query_estimate(c, t) else { continue };
            let ego = EgoSlotView {
                v: v.state.v,
                x: 0.0,
                d_to_conflict: link.ego_point - s,
            };
            let dims = TargetDims {
                l: link.target_length,
                w: link.target_width,
            };
            if let Ok(mut b) = adjust_slot(link.target_point - sm.d, ego, dims, ctl.t_gap, ctl.redundancy) {
                b.conflict_s = link.ego_point;
                b.target = Some(link.target);
                reds.push(b);
            }
        }
        let h = ENVELOPE_HORIZON;
        let reach = (v.state.v * h + 0.5 * ctl.limits.a_max * h * h).max(20.0);
        let end = (s + reach).min(v.plan.total_length());
        let greens = available_slots(&reds, s, end, 0.0, v.params.width);
        reds.into_iter()
            .chain(greens)
            .map(|b| SlotView {
                quad: project_slot(&b, &v.plan.polyline, &cam),
                slot: b,
            })
            .collect()
    }

    /// Summary of the run so far, including vehicles still on the road.
    pub fn summary(&self) -> Summary {
        let mut vehicles = self.finished.clone();
        vehicles.extend(self.vehicles.values().map(|v| self.record_of(v, None)));
        vehicles.sort_by_key(|r| r.id);
        let done: Vec<&VehicleRecord> = vehicles.iter().filter(|r| r.travel_time.is_some()).collect();
        let mean = |f: &dyn Fn(&VehicleRecord) -> f64| {
            (!done.is_empty()).then(|| done.iter().map(|r| f(r)).sum::<f64>() / done.len() as f64)
        };
        let aggregates = Aggregates {
            spawned: self.spawned,
            exited: self.finished.len(),
            active: self.vehicles.len(),
            mean_travel_time: mean(&|r| r.travel_time.unwrap_or(0.0)),
            mean_energy: mean(&|r| r.energy),
            total_stops: vehicles.iter().map(|r| r.stops).sum(),
            min_speed: vehicles.iter().map(|r| r.min_speed).reduce(f64::min),
            occupancy_overlaps: self
                .violations
                .iter()
                .filter(|v| matches!(v, Violation::Overlap { .. }))
                .count(),
            collisions: self
                .violations
                .iter()
                .filter(|v| matches!(v, Violation::Collision { .. }))
                .count(),
            failsafe_activations: self.fs_events.len(),
            estimator_calls: self.estimator_calls,
            max_est_err: self.max_est_err,
        };
        Summary {
            scenario: self.cfg.name.clone(),
            mode: self.cfg.mode.as_str().into(),
            seed: self.cfg.seed,
            duration: self.time(),
            vehicles,
            aggregates,
            violations: self.violations.clone(),
        }
    }

    pub fn into_result(self) -> RunResult {
        RunResult {
            summary: self.summary(),
            channel_counts: self.channel.counts(),
            failsafe: self.fs_events,
            trace: self.trace,
            series: self.series,
        }
    }

    /// Trace CSV recorded so far.
    pub fn trace_csv(&self) -> Option<&str> {
        self.trace.as_deref()
    }
}
