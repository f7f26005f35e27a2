//! Synthetic corridor: four-leg single-lane intersections in a line along +x,
//! joined by two-way links, each with north and south side streets.

use super::{
    Intersection, IntersectionId, Lane, LaneGraph, LaneId, Leg, Link, LinkId, MapDocument,
    Movement, Turn, WorldError,
};
use crate::geometry::{sample_arc, sample_straight, Point};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

const STRAIGHT_STEP: f64 = 1.0;
const ARC_STEP: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorridorParams {
    pub intersections: usize,
    /// Center-to-center spacing of consecutive intersections, m.
    pub block_length: f64,
    pub lane_width: f64,
    /// m/s
    pub speed_limit: f64,
    /// Length of side streets and of the corridor end links, m.
    pub leg_length: f64,
    pub left_turn_radius: f64,
    pub right_turn_radius: f64,
}

impl Default for CorridorParams {
    fn default() -> Self {
        Self {
            intersections: 4,
            block_length: 150.0,
            lane_width: 3.5,
            speed_limit: 13.4,
            leg_length: 150.0,
            left_turn_radius: 8.0,
            right_turn_radius: 5.0,
        }
    }
}

impl CorridorParams {
    /// Half-size of the intersection box: large enough for both turn radii.
    pub fn box_half_size(&self) -> f64 {
        let w2 = self.lane_width / 2.0;
        (self.left_turn_radius - w2).max(self.right_turn_radius + w2) + 0.5
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: &str| Err(WorldError::InvalidMap(m.to_string()));
        if self.intersections == 0 {
            return bad("corridor needs at least one intersection");
        }
        if !(self.lane_width > 0.0 && self.speed_limit > 0.0 && self.leg_length > 1.0) {
            return bad("lane width, speed limit and leg length must be positive");
        }
        if !(self.left_turn_radius > 0.0 && self.right_turn_radius > 0.0) {
            return bad("turn radii must be positive");
        }
        if self.block_length <= 2.0 * self.box_half_size() + 1.0 {
            return bad("block length too short for the intersection box");
        }
        Ok(())
    }

    fn center(&self, k: usize) -> Point {
        Point::new(k as f64 * self.block_length, 0.0)
    }

    pub fn build(&self) -> Result<LaneGraph, WorldError> {
        self.validate()?;
        LaneGraph::from_document(self.document())
    }

    pub fn document(&self) -> MapDocument {
        Builder::new(self).finish()
    }
}

fn leg_angle(leg: Leg) -> f64 {
    leg.index() as f64 * FRAC_PI_2
}

fn push_unique(dst: &mut Vec<Point>, pts: Vec<Point>) {
    for p in pts {
        if dst.last().is_none_or(|q| q.dist(p) > 1e-9) {
            dst.push(p);
        }
    }
}

/// Movement centerline for an approach from the south, intersection at the origin.
fn canonical_movement(turn: Turn, w: f64, h: f64, r_left: f64, r_right: f64) -> Vec<Point> {
    let w2 = w / 2.0;
    let entry = Point::new(w2, -h);
    let mut pts = Vec::new();
    match turn {
        Turn::Through => push_unique(
            &mut pts,
            sample_straight(entry, Point::new(w2, h), STRAIGHT_STEP),
        ),
        Turn::Left => {
            let c = Point::new(w2 - r_left, w2 - r_left);
            push_unique(
                &mut pts,
                sample_straight(entry, Point::new(w2, c.y), STRAIGHT_STEP),
            );
            push_unique(&mut pts, sample_arc(c, r_left, 0.0, FRAC_PI_2, ARC_STEP));
            push_unique(
                &mut pts,
                sample_straight(Point::new(c.x, w2), Point::new(-h, w2), STRAIGHT_STEP),
            );
        }
        Turn::Right => {
            let c = Point::new(w2 + r_right, -w2 - r_right);
            push_unique(
                &mut pts,
                sample_straight(entry, Point::new(w2, c.y), STRAIGHT_STEP),
            );
            push_unique(
                &mut pts,
                sample_arc(c, r_right, 2.0 * FRAC_PI_2, FRAC_PI_2, ARC_STEP),
            );
            push_unique(
                &mut pts,
                sample_straight(Point::new(c.x, -w2), Point::new(h, -w2), STRAIGHT_STEP),
            );
        }
    }
    pts
}

struct Builder<'a> {
    p: &'a CorridorParams,
    next_lane: u32,
    next_link: u32,
    lanes: BTreeMap<LaneId, Lane>,
    links: Vec<(LinkId, Vec<LaneId>)>,
}

impl<'a> Builder<'a> {
    fn new(p: &'a CorridorParams) -> Self {
        Self {
            p,
            next_lane: 0,
            next_link: 0,
            lanes: BTreeMap::new(),
            links: Vec::new(),
        }
    }

    fn lane(&mut self, waypoints: Vec<Point>) -> LaneId {
        let id = LaneId(self.next_lane);
        self.next_lane += 1;
        self.lanes.insert(
            id,
            Lane {
                id,
                waypoints,
                speed_limit: self.p.speed_limit,
                successors: Vec::new(),
                intersection: None,
                movement: None,
            },
        );
        id
    }

    fn link(&mut self, lanes: Vec<LaneId>) {
        self.links.push((LinkId(self.next_link), lanes));
        self.next_link += 1;
    }

    /// Box-edge point where the approach lane from `leg` ends.
    fn entry_point(&self, k: usize, leg: Leg) -> Point {
        let p = self.p;
        let c = p.center(k);
        let local = Point::new(p.lane_width / 2.0, -p.box_half_size()).rotate(leg_angle(leg));
        c.offset(local.x, local.y)
    }

    /// Box-edge point where the exit lane toward `leg` begins.
    fn exit_point(&self, k: usize, leg: Leg) -> Point {
        let p = self.p;
        let c = p.center(k);
        let local = Point::new(p.lane_width / 2.0, p.box_half_size())
            .rotate(leg_angle(leg) - leg_angle(Leg::North));
        c.offset(local.x, local.y)
    }

    fn outward(leg: Leg) -> Point {
        Point::new(0.0, -1.0).rotate(leg_angle(leg))
    }

    fn finish(mut self) -> MapDocument {
        let p = self.p.clone();
        let n = p.intersections;
        let len = p.leg_length;
        let mut approach: Vec<[Option<LaneId>; 4]> = vec![[None; 4]; n];
        let mut exit: Vec<[Option<LaneId>; 4]> = vec![[None; 4]; n];

        for k in 0..n {
            for leg in Leg::ALL {
                let internal_west = leg == Leg::West && k > 0;
                let internal_east = leg == Leg::East && k + 1 < n;
                if internal_west || internal_east {
                    continue;
                }
                let o = Self::outward(leg);
                let end = self.entry_point(k, leg);
                let a = self.lane(sample_straight(
                    end.offset(o.x * len, o.y * len),
                    end,
                    STRAIGHT_STEP,
                ));
                let start = self.exit_point(k, leg);
                let e = self.lane(sample_straight(
                    start,
                    start.offset(o.x * len, o.y * len),
                    STRAIGHT_STEP,
                ));
                approach[k][leg.index()] = Some(a);
                exit[k][leg.index()] = Some(e);
                self.link(vec![a, e]);
            }
        }
        for k in 0..n.saturating_sub(1) {
            let eb = self.lane(sample_straight(
                self.exit_point(k, Leg::East),
                self.entry_point(k + 1, Leg::West),
                STRAIGHT_STEP,
            ));
            let wb = self.lane(sample_straight(
                self.exit_point(k + 1, Leg::West),
                self.entry_point(k, Leg::East),
                STRAIGHT_STEP,
            ));
            exit[k][Leg::East.index()] = Some(eb);
            approach[k + 1][Leg::West.index()] = Some(eb);
            exit[k + 1][Leg::West.index()] = Some(wb);
            approach[k][Leg::East.index()] = Some(wb);
            self.link(vec![eb, wb]);
        }

        let mut intersections = Vec::new();
        let h = p.box_half_size();
        for k in 0..n {
            let ix = IntersectionId(k as u32);
            let c = p.center(k);
            let approaches = approach[k].map(|a| a.expect("approach lane"));
            let exits = exit[k].map(|e| e.expect("exit lane"));
            let mut movements = Vec::new();
            for leg in Leg::ALL {
                for turn in Turn::ALL {
                    let pts = canonical_movement(
                        turn,
                        p.lane_width,
                        h,
                        p.left_turn_radius,
                        p.right_turn_radius,
                    )
                    .into_iter()
                    .map(|q| {
                        let r = q.rotate(leg_angle(leg));
                        c.offset(r.x, r.y)
                    })
                    .collect();
                    let id = self.lane(pts);
                    let lane = self.lanes.get_mut(&id).unwrap();
                    lane.intersection = Some(ix);
                    lane.movement = Some(Movement { from: leg, turn });
                    lane.successors.push(exits[leg.exit_for(turn).index()]);
                    self.lanes
                        .get_mut(&approaches[leg.index()])
                        .unwrap()
                        .successors
                        .push(id);
                    movements.push(id);
                }
            }
            self.link(movements.clone());
            intersections.push(Intersection {
                id: ix,
                center: c,
                half_size: h,
                approaches,
                exits,
                movements,
            });
        }

        let mut lanes = self.lanes;
        let links = self
            .links
            .into_iter()
            .map(|(id, ids)| Link {
                id,
                lanes: ids.iter().map(|i| lanes.remove(i).unwrap()).collect(),
            })
            .collect();
        MapDocument {
            lane_width: p.lane_width,
            links,
            intersections,
        }
    }
}
