//! Pairwise conflict classification among the movements of one intersection.

use super::{IntersectionId, LaneGraph, LaneId, WorldError};
use crate::geometry::{segment_intersection, Point, Polyline};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Two polylines closer than this are treated as coincident.
pub const COINCIDENCE_TOL: f64 = 0.2;
/// Conflict locations of the same kind closer than this form one point.
pub const CLUSTER_RADIUS: f64 = 0.5;
const WALK_STEP: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    Crossing,
    Merging,
    Diverging,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictPoint {
    pub id: u32,
    pub intersection: IntersectionId,
    pub kind: ConflictKind,
    pub position: Point,
    /// Arc-length of the point along each involved movement lane.
    pub offsets: Vec<(LaneId, f64)>,
}

impl ConflictPoint {
    pub fn offset(&self, lane: LaneId) -> Option<f64> {
        self.offsets
            .iter()
            .find(|(l, _)| *l == lane)
            .map(|(_, o)| *o)
    }
}

/// Relation between an ordered pair of movements; offsets are movement arc-lengths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairRelation {
    pub kind: ConflictKind,
    pub offset_a: f64,
    pub offset_b: f64,
    /// Index into [`ConflictTable::points`].
    pub point: usize,
}

impl PairRelation {
    fn mirrored(self) -> Self {
        Self {
            offset_a: self.offset_b,
            offset_b: self.offset_a,
            ..self
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ConflictTable {
    points: Vec<ConflictPoint>,
    pairs: BTreeMap<(LaneId, LaneId), PairRelation>,
}

impl ConflictTable {
    pub fn points(&self) -> &[ConflictPoint] {
        &self.points
    }

    /// Relation of movement `a` with movement `b`, oriented so `offset_a` is along `a`.
    pub fn pair(&self, a: LaneId, b: LaneId) -> Option<&PairRelation> {
        self.pairs.get(&(a, b))
    }

    pub fn conflicts(&self, a: LaneId, b: LaneId) -> bool {
        self.pairs.contains_key(&(a, b))
    }

    pub fn count(&self, kind: ConflictKind) -> usize {
        self.points.iter().filter(|p| p.kind == kind).count()
    }
}

struct RawConflict {
    a: LaneId,
    b: LaneId,
    kind: ConflictKind,
    offset_a: f64,
    offset_b: f64,
    position: Point,
}

fn within(p: &Polyline, q: Point) -> bool {
    p.distance_to(q) <= COINCIDENCE_TOL
}

/// Bisects the boundary of `inside` between `lo` (inside) and `hi` (outside).
fn bisect(mut lo: f64, mut hi: f64, inside: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Arc-length along `a` where it stops coinciding with `b`, walking forward from the start.
fn separation(a: &Polyline, b: &Polyline) -> f64 {
    let mut s = 0.0;
    while s < a.length() {
        let next = (s + WALK_STEP).min(a.length());
        if !within(b, a.point_at(next)) {
            return bisect(s, next, |x| within(b, a.point_at(x)));
        }
        s = next;
    }
    a.length()
}

/// Arc-length along `a` where it starts coinciding with `b`, walking backward from the end.
fn junction(a: &Polyline, b: &Polyline) -> f64 {
    let mut s = a.length();
    while s > 0.0 {
        let prev = (s - WALK_STEP).max(0.0);
        if !within(b, a.point_at(prev)) {
            return bisect(s, prev, |x| within(b, a.point_at(x)));
        }
        s = prev;
    }
    0.0
}

fn fully_overlaps(a: &Polyline, b: &Polyline) -> bool {
    a.points().iter().all(|p| within(b, *p)) && b.points().iter().all(|p| within(a, *p))
}

fn crossings(a: &Polyline, b: &Polyline) -> Vec<(f64, f64, Point)> {
    let (pa, pb) = (a.points(), b.points());
    let mut out: Vec<(f64, f64, Point)> = Vec::new();
    for i in 0..pa.len() - 1 {
        for j in 0..pb.len() - 1 {
            if let Some((t, u)) = segment_intersection(pa[i], pa[i + 1], pb[j], pb[j + 1]) {
                let p = pa[i].lerp(pa[i + 1], t);
                if out.iter().any(|(_, _, q)| q.dist(p) < CLUSTER_RADIUS) {
                    continue;
                }
                let sa = a.arc()[i] + t * (a.arc()[i + 1] - a.arc()[i]);
                let sb = b.arc()[j] + u * (b.arc()[j + 1] - b.arc()[j]);
                out.push((sa, sb, p));
            }
        }
    }
    out
}

fn classify(
    a: LaneId,
    pa: &Polyline,
    b: LaneId,
    pb: &Polyline,
) -> Result<Option<RawConflict>, WorldError> {
    if fully_overlaps(pa, pb) {
        return Err(WorldError::DegenerateGeometry { a, b });
    }
    let make = |kind, offset_a: f64, offset_b: f64| {
        let position = pa.point_at(offset_a).lerp(pb.point_at(offset_b), 0.5);
        Some(RawConflict {
            a,
            b,
            kind,
            offset_a,
            offset_b,
            position,
        })
    };
    if pa.start().dist(pb.start()) <= COINCIDENCE_TOL {
        return Ok(make(
            ConflictKind::Diverging,
            separation(pa, pb),
            separation(pb, pa),
        ));
    }
    if pa.end().dist(pb.end()) <= COINCIDENCE_TOL {
        return Ok(make(
            ConflictKind::Merging,
            junction(pa, pb),
            junction(pb, pa),
        ));
    }
    let hits = crossings(pa, pb);
    if hits.len() > 1 {
        log::warn!(
            "movements {a} and {b} cross {} times; keeping the first",
            hits.len()
        );
    }
    Ok(hits
        .first()
        .and_then(|&(sa, sb, _)| make(ConflictKind::Crossing, sa, sb)))
}

/// Classifies every pair of the intersection's movements and groups merge and
/// diverge locations that lie within [`CLUSTER_RADIUS`] of each other.
pub fn enumerate_conflicts(
    ix: IntersectionId,
    graph: &LaneGraph,
) -> Result<ConflictTable, WorldError> {
    let movements = graph.intersection(ix)?.movements.clone();
    let mut raw = Vec::new();
    for (i, &a) in movements.iter().enumerate() {
        for &b in &movements[i + 1..] {
            if let Some(c) = classify(a, graph.polyline(a)?, b, graph.polyline(b)?)? {
                raw.push(c);
            }
        }
    }

    // single-linkage clustering; crossings stay one point per pair
    let mut cluster: Vec<usize> = (0..raw.len()).collect();
    fn root(c: &mut [usize], mut i: usize) -> usize {
        while c[i] != i {
            c[i] = c[c[i]];
            i = c[i];
        }
        i
    }
    for i in 0..raw.len() {
        for j in i + 1..raw.len() {
            let (ri, rj) = (&raw[i], &raw[j]);
            if ri.kind == rj.kind
                && ri.kind != ConflictKind::Crossing
                && ri.position.dist(rj.position) < CLUSTER_RADIUS
            {
                let (x, y) = (root(&mut cluster, i), root(&mut cluster, j));
                cluster[x.max(y)] = x.min(y);
            }
        }
    }

    let mut table = ConflictTable::default();
    let mut index_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut members: Vec<usize> = Vec::new();
    for i in 0..raw.len() {
        let r = root(&mut cluster, i);
        let idx = *index_of_root.entry(r).or_insert_with(|| {
            table.points.push(ConflictPoint {
                id: table.points.len() as u32,
                intersection: ix,
                kind: raw[r].kind,
                position: Point::default(),
                offsets: Vec::new(),
            });
            members.push(0);
            table.points.len() - 1
        });
        let c = &raw[i];
        let cp = &mut table.points[idx];
        members[idx] += 1;
        cp.position.x += c.position.x;
        cp.position.y += c.position.y;
        for (lane, off) in [(c.a, c.offset_a), (c.b, c.offset_b)] {
            match cp.offsets.iter_mut().find(|(l, _)| *l == lane) {
                Some(entry) => entry.1 = entry.1.min(off),
                None => cp.offsets.push((lane, off)),
            }
        }
        let rel = PairRelation {
            kind: c.kind,
            offset_a: c.offset_a,
            offset_b: c.offset_b,
            point: idx,
        };
        table.pairs.insert((c.a, c.b), rel);
        table.pairs.insert((c.b, c.a), rel.mirrored());
    }
    for (cp, n) in table.points.iter_mut().zip(&members) {
        cp.position.x /= *n as f64;
        cp.position.y /= *n as f64;
        cp.offsets.sort_by_key(|(l, _)| *l);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{CorridorParams, Leg, Turn};

    fn graph() -> LaneGraph {
        CorridorParams::default().build().unwrap()
    }

    #[test]
    fn corridor_counts_by_kind() {
        let g = graph();
        for ix in g.intersections() {
            let t = g.conflict_table(ix.id).unwrap();
            assert_eq!(t.count(ConflictKind::Crossing), 16);
            assert_eq!(t.count(ConflictKind::Merging), 8);
            assert_eq!(t.count(ConflictKind::Diverging), 8);
        }
    }

    #[test]
    fn relation_is_symmetric() {
        let g = graph();
        let ix = &g.intersections()[1];
        let t = g.conflict_table(ix.id).unwrap();
        for &a in &ix.movements {
            for &b in &ix.movements {
                match (t.pair(a, b), t.pair(b, a)) {
                    (Some(x), Some(y)) => {
                        assert_eq!(x.kind, y.kind);
                        assert_eq!(x.point, y.point);
                        assert_eq!(x.offset_a, y.offset_b);
                    }
                    (None, None) => {}
                    _ => panic!("asymmetric relation {a} {b}"),
                }
            }
        }
    }

    #[test]
    fn opposing_throughs_do_not_conflict() {
        let g = graph();
        let ix = g.intersections()[0].id;
        let sn = g.movement_lane(ix, Leg::South, Turn::Through).unwrap();
        let ns = g.movement_lane(ix, Leg::North, Turn::Through).unwrap();
        assert!(g.conflict_table(ix).unwrap().pair(sn, ns).is_none());
    }

    #[test]
    fn left_vs_opposing_through_single_crossing() {
        let g = graph();
        let ix = g.intersections()[2].id;
        let left = g.movement_lane(ix, Leg::South, Turn::Left).unwrap();
        let thr = g.movement_lane(ix, Leg::North, Turn::Through).unwrap();
        let rel = *g.conflict_table(ix).unwrap().pair(left, thr).unwrap();
        assert_eq!(rel.kind, ConflictKind::Crossing);

        // brute force over densely resampled polylines
        let (pa, pb) = (g.polyline(left).unwrap(), g.polyline(thr).unwrap());
        let dense = |p: &Polyline| {
            let n = (p.length() / 0.01) as usize;
            (0..=n)
                .map(|i| p.point_at(i as f64 * 0.01))
                .collect::<Vec<_>>()
        };
        let (da, db) = (dense(pa), dense(pb));
        let mut hits = Vec::new();
        for i in 0..da.len() - 1 {
            for j in 0..db.len() - 1 {
                if let Some((t, _)) = segment_intersection(da[i], da[i + 1], db[j], db[j + 1]) {
                    hits.push(da[i].lerp(da[i + 1], t));
                }
            }
        }
        assert!(!hits.is_empty());
        assert!(hits.iter().all(|h| h.dist(hits[0]) < 0.05));
        assert!(pa.point_at(rel.offset_a).dist(hits[0]) < 0.05);
        assert!(pb.point_at(rel.offset_b).dist(hits[0]) < 0.05);
    }

    #[test]
    fn merging_offsets_mark_where_paths_join() {
        let g = graph();
        let ix = g.intersections()[0].id;
        let thr = g.movement_lane(ix, Leg::South, Turn::Through).unwrap();
        let left = g.movement_lane(ix, Leg::West, Turn::Left).unwrap();
        let rel = *g.conflict_table(ix).unwrap().pair(thr, left).unwrap();
        assert_eq!(rel.kind, ConflictKind::Merging);
        let (pt, pl) = (g.polyline(thr).unwrap(), g.polyline(left).unwrap());
        let after = pt.point_at(rel.offset_a + 0.1);
        assert!(pl.distance_to(after) <= COINCIDENCE_TOL);
        let before = pt.point_at(rel.offset_a - 0.1);
        assert!(pl.distance_to(before) > COINCIDENCE_TOL);
    }

    #[test]
    fn identical_movements_are_degenerate() {
        let p = Polyline::new(vec![Point::new(0.0, 0.0), Point::new(5.0, 0.0)]).unwrap();
        let r = classify(LaneId(1), &p, LaneId(2), &p);
        assert!(matches!(r, Err(WorldError::DegenerateGeometry { .. })));
    }
}
