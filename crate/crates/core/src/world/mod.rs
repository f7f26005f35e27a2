//! Corridor map, map matching, lane-level path planning and conflict points.

mod conflicts;
mod corridor;

pub use conflicts::{
    enumerate_conflicts, ConflictKind, ConflictPoint, ConflictTable, PairRelation,
};
pub use corridor::CorridorParams;

use crate::geometry::{Point, Polyline, PolylineError};
use crate::VehicleId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::fmt;

/// Maximum distance from the planned polyline before a position is off-map.
pub const MATCH_RADIUS: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntersectionId(pub u32);

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lane{}", self.0)
    }
}

impl fmt::Display for IntersectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Intersection legs in counter-clockwise order starting from the south.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    South,
    East,
    North,
    West,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::South, Leg::East, Leg::North, Leg::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Leg {
        Self::ALL[i % 4]
    }

    /// Exit leg reached from this approach with the given turn.
    pub fn exit_for(self, turn: Turn) -> Leg {
        let step = match turn {
            Turn::Right => 1,
            Turn::Through => 2,
            Turn::Left => 3,
        };
        Leg::from_index(self.index() + step)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Turn {
    Through,
    Left,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Through, Turn::Left, Turn::Right];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Movement {
    pub from: Leg,
    pub turn: Turn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    pub waypoints: Vec<Point>,
    /// m/s
    pub speed_limit: f64,
    pub successors: Vec<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersection: Option<IntersectionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub movement: Option<Movement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub lanes: Vec<Lane>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: IntersectionId,
    pub center: Point,
    /// Half the side of the square intersection box; stop bars sit on its edges.
    pub half_size: f64,
    /// Approach lane per leg, indexed by [`Leg::index`].
    pub approaches: [LaneId; 4],
    /// Exit lane per leg, indexed by [`Leg::index`].
    pub exits: [LaneId; 4],
    pub movements: Vec<LaneId>,
}

/// Serialized form of the map: links, their lanes and waypoint arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDocument {
    pub lane_width: f64,
    pub links: Vec<Link>,
    pub intersections: Vec<Intersection>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("position is {distance:.2} m from the planned path (limit {MATCH_RADIUS} m)")]
    OffMap { distance: f64 },
    #[error("no successor chain from {from} to {to}")]
    Unreachable { from: LaneId, to: LaneId },
    #[error("movements {a} and {b} overlap for their entire length")]
    DegenerateGeometry { a: LaneId, b: LaneId },
    #[error("conflict point already passed by {by:.3} m")]
    AlreadyPassed { by: f64 },
    #[error("conflict point does not lie on the path")]
    NotOnPath,
    #[error("unknown lane {0}")]
    UnknownLane(LaneId),
    #[error("unknown intersection {0}")]
    UnknownIntersection(IntersectionId),
    #[error("invalid map: {0}")]
    InvalidMap(String),
}

impl From<PolylineError> for WorldError {
    fn from(e: PolylineError) -> Self {
        WorldError::InvalidMap(e.to_string())
    }
}

/// Immutable lane graph with cached polylines and per-intersection conflict
/// tables.
#[derive(Clone, Debug)]
pub struct LaneGraph {
    doc: MapDocument,
    lanes: BTreeMap<LaneId, (usize, usize)>,
    polylines: BTreeMap<LaneId, Polyline>,
    conflicts: BTreeMap<IntersectionId, ConflictTable>,
}

impl LaneGraph {
    pub fn from_document(doc: MapDocument) -> Result<Self, WorldError> {
        if !(doc.lane_width > 0.0) {
            return Err(WorldError::InvalidMap("lane_width must be positive".into()));
        }
        let mut lanes = BTreeMap::new();
        let mut polylines = BTreeMap::new();
        for (li, link) in doc.links.iter().enumerate() {
            for (ki, lane) in link.lanes.iter().enumerate() {
                if lanes.insert(lane.id, (li, ki)).is_some() {
                    return Err(WorldError::InvalidMap(format!("duplicate {}", lane.id)));
                }
                if !(lane.speed_limit > 0.0) {
                    return Err(WorldError::InvalidMap(format!("{} speed limit", lane.id)));
                }
                let poly = Polyline::new(lane.waypoints.clone())
                    .map_err(|e| WorldError::InvalidMap(format!("{}: {e}", lane.id)))?;
                polylines.insert(lane.id, poly);
            }
        }
        for link in &doc.links {
            for lane in &link.lanes {
                for succ in &lane.successors {
                    if !lanes.contains_key(succ) {
                        return Err(WorldError::InvalidMap(format!(
                            "{} references missing successor {}",
                            lane.id, succ
                        )));
                    }
                }
            }
        }
        let mut graph = Self {
            doc,
            lanes,
            polylines,
            conflicts: BTreeMap::new(),
        };
        for ix in &graph.doc.intersections {
            let all = ix
                .approaches
                .iter()
                .chain(ix.exits.iter())
                .chain(ix.movements.iter());
            for id in all {
                if !graph.lanes.contains_key(id) {
                    return Err(WorldError::UnknownLane(*id));
                }
            }
            if ix.movements.len() != 12 {
                return Err(WorldError::InvalidMap(format!(
                    "intersection {} has {} movements, expected 12",
                    ix.id,
                    ix.movements.len()
                )));
            }
        }
        let mut tables = BTreeMap::new();
        for ix in &graph.doc.intersections {
            tables.insert(ix.id, enumerate_conflicts(ix.id, &graph)?);
        }
        graph.conflicts = tables;
        Ok(graph)
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let doc: MapDocument =
            serde_json::from_str(text).map_err(|e| WorldError::InvalidMap(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("map document serializes")
    }

    pub fn document(&self) -> &MapDocument {
        &self.doc
    }

    pub fn lane_width(&self) -> f64 {
        self.doc.lane_width
    }

    pub fn lane(&self, id: LaneId) -> Result<&Lane, WorldError> {
        let (li, ki) = self.lanes.get(&id).ok_or(WorldError::UnknownLane(id))?;
        Ok(&self.doc.links[*li].lanes[*ki])
    }

    pub fn polyline(&self, id: LaneId) -> Result<&Polyline, WorldError> {
        self.polylines.get(&id).ok_or(WorldError::UnknownLane(id))
    }

    pub fn lanes(&self) -> impl Iterator<Item = &Lane> {
        self.doc.links.iter().flat_map(|l| l.lanes.iter())
    }

    pub fn intersections(&self) -> &[Intersection] {
        &self.doc.intersections
    }

    pub fn intersection(&self, id: IntersectionId) -> Result<&Intersection, WorldError> {
        self.doc
            .intersections
            .iter()
            .find(|i| i.id == id)
            .ok_or(WorldError::UnknownIntersection(id))
    }

    pub fn conflict_table(&self, id: IntersectionId) -> Result<&ConflictTable, WorldError> {
        self.conflicts
            .get(&id)
            .ok_or(WorldError::UnknownIntersection(id))
    }

    /// Movement lane for `turn` from `leg` at `ix`.
    pub fn movement_lane(
        &self,
        ix: IntersectionId,
        leg: Leg,
        turn: Turn,
    ) -> Result<LaneId, WorldError> {
        let inter = self.intersection(ix)?;
        for id in &inter.movements {
            let lane = self.lane(*id)?;
            if lane.movement == Some(Movement { from: leg, turn }) {
                return Ok(*id);
            }
        }
        Err(WorldError::InvalidMap(format!(
            "intersection {ix} lacks {leg:?} {turn:?}"
        )))
    }

    /// Lanes with no predecessor: where traffic enters the map.
    pub fn entry_lanes(&self) -> Vec<LaneId> {
        let mut has_pred = std::collections::BTreeSet::new();
        for lane in self.lanes() {
            has_pred.extend(lane.successors.iter().copied());
        }
        self.lanes()
            .map(|l| l.id)
            .filter(|id| !has_pred.contains(id))
            .collect()
    }
}

/// Crossing of one intersection along a path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub intersection: IntersectionId,
    pub movement: LaneId,
    /// Path arc-length of the stop bar.
    pub entry_s: f64,
    /// Path arc-length where the movement joins the exit lane.
    pub exit_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathPlan {
    pub vehicle_id: VehicleId,
    pub lanes: Vec<LaneId>,
    /// Path arc-length at the start of each lane in `lanes`.
    pub lane_starts: Vec<f64>,
    pub polyline: Polyline,
    pub crossings: Vec<Crossing>,
}

impl PathPlan {
    pub fn total_length(&self) -> f64 {
        self.polyline.length()
    }

    pub fn point_at(&self, s: f64) -> Point {
        self.polyline.point_at(s)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        self.polyline.heading_at(s)
    }

    pub fn lane_start(&self, lane: LaneId) -> Option<f64> {
        self.lanes
            .iter()
            .position(|l| *l == lane)
            .map(|i| self.lane_starts[i])
    }

    /// Index into `lanes` of the lane containing arc-length `s`.
    pub fn lane_index_at(&self, s: f64) -> usize {
        match self.lane_starts.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    pub fn lane_at(&self, s: f64) -> LaneId {
        self.lanes[self.lane_index_at(s)]
    }

    /// First crossing whose exit lies ahead of `s`.
    pub fn next_crossing(&self, s: f64) -> Option<&Crossing> {
        self.crossings.iter().find(|c| c.exit_s > s)
    }

    pub fn crossing(&self, ix: IntersectionId) -> Option<&Crossing> {
        self.crossings.iter().find(|c| c.intersection == ix)
    }

    /// Path arc-length of a movement-relative offset.
    pub fn movement_offset(&self, movement: LaneId, offset: f64) -> Option<f64> {
        self.lane_start(movement).map(|s| s + offset)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapMatchResult {
    pub lane: LaneId,
    pub s: f64,
    pub lateral: f64,
}

/// Projects a world coordinate onto the plan polyline.
pub fn match_position(coord: Point, plan: &PathPlan) -> Result<MapMatchResult, WorldError> {
    let pr = plan.polyline.project(coord);
    if pr.distance > MATCH_RADIUS {
        return Err(WorldError::OffMap {
            distance: pr.distance,
        });
    }
    Ok(MapMatchResult {
        lane: plan.lane_at(pr.s),
        s: pr.s,
        lateral: pr.lateral,
    })
}

/// Successor-chain search from `origin` to `destination`.
pub fn plan_path(
    origin: LaneId,
    destination: LaneId,
    graph: &LaneGraph,
) -> Result<PathPlan, WorldError> {
    graph.lane(origin)?;
    graph.lane(destination)?;
    let mut prev: BTreeMap<LaneId, LaneId> = BTreeMap::new();
    let mut queue = VecDeque::from([origin]);
    let mut found = origin == destination;
    while let Some(cur) = queue.pop_front() {
        if found {
            break;
        }
        for succ in &graph.lane(cur)?.successors {
            if *succ == origin || prev.contains_key(succ) {
                continue;
            }
            prev.insert(*succ, cur);
            if *succ == destination {
                found = true;
                break;
            }
            queue.push_back(*succ);
        }
    }
    if !found {
        return Err(WorldError::Unreachable {
            from: origin,
            to: destination,
        });
    }
    let mut lanes = vec![destination];
    while let Some(p) = prev.get(lanes.last().unwrap()) {
        lanes.push(*p);
    }
    lanes.reverse();
    PathPlan::from_lanes(lanes, graph)
}

impl PathPlan {
    /// Plan over an explicit lane sequence; consecutive lanes must be successors.
    pub fn from_lanes(lanes: Vec<LaneId>, graph: &LaneGraph) -> Result<PathPlan, WorldError> {
        if lanes.is_empty() {
            return Err(WorldError::InvalidMap("empty lane sequence".into()));
        }
        for w in lanes.windows(2) {
            if !graph.lane(w[0])?.successors.contains(&w[1]) {
                return Err(WorldError::Unreachable {
                    from: w[0],
                    to: w[1],
                });
            }
        }
        let mut polyline = graph.polyline(lanes[0])?.clone();
        let mut lane_starts = vec![0.0];
        for id in &lanes[1..] {
            lane_starts.push(polyline.length());
            polyline.stitch(graph.polyline(*id)?);
        }
        let mut crossings = Vec::new();
        for (i, id) in lanes.iter().enumerate() {
            let lane = graph.lane(*id)?;
            if let Some(ix) = lane.intersection {
                let len = graph.polyline(*id)?.length();
                crossings.push(Crossing {
                    intersection: ix,
                    movement: *id,
                    entry_s: lane_starts[i],
                    exit_s: lane_starts[i] + len,
                });
            }
        }
        Ok(PathPlan {
            vehicle_id: VehicleId::default(),
            lanes,
            lane_starts,
            polyline,
            crossings,
        })
    }
}

/// Remaining distance along `plan` from `s` to the conflict point.
pub fn distance_to_conflict(
    plan: &PathPlan,
    s: f64,
    cp: &ConflictPoint,
) -> Result<f64, WorldError> {
    let offset = cp
        .offsets
        .iter()
        .find_map(|(lane, off)| plan.movement_offset(*lane, *off))
        .ok_or(WorldError::NotOnPath)?;
    distance_to_offset(offset, s)
}

pub(crate) fn distance_to_offset(offset: f64, s: f64) -> Result<f64, WorldError> {
    if s > offset {
        Err(WorldError::AlreadyPassed { by: s - offset })
    } else {
        Ok(offset - s)
    }
}

/// Reservation trigger region of one intersection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoFence {
    pub intersection: IntersectionId,
    /// m
    pub d_theta: f64,
    /// s
    pub t_theta: f64,
}

impl GeoFence {
    pub fn new(
        intersection: IntersectionId,
        d_theta: f64,
        t_theta: f64,
    ) -> Result<Self, WorldError> {
        if !(d_theta > 0.0 && t_theta > 0.0) {
            return Err(WorldError::InvalidMap(
                "geo-fence thresholds must be positive".into(),
            ));
        }
        Ok(Self {
            intersection,
            d_theta,
            t_theta,
        })
    }

    /// Time-based or location-based trigger.
    pub fn triggers(&self, eta: f64, distance: f64) -> bool {
        eta <= self.t_theta || distance <= self.d_theta
    }
}
