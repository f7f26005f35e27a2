//! Planar geometry helpers: points, arc-length parameterized polylines,
//! nearest-point projection and segment intersection.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }

    /// Rotates counter-clockwise about the origin.
    pub fn rotate(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn offset(self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

/// Result of projecting a point onto a polyline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc-length of the foot point.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the travel direction.
    pub lateral: f64,
    pub distance: f64,
    pub segment: usize,
}

/// Polyline with cumulative arc-length. Construction rejects fewer than two
/// points and zero-length segments.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    points: Vec<Point>,
    arc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolylineError {
    #[error("polyline needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("arc-length not strictly increasing at point {0}")]
    NonIncreasing(usize),
}

impl Polyline {
    pub fn new(points: Vec<Point>) -> Result<Self, PolylineError> {
        if points.len() < 2 {
            return Err(PolylineError::TooFewPoints(points.len()));
        }
        let mut arc = Vec::with_capacity(points.len());
        arc.push(0.0);
        for i in 1..points.len() {
            let d = points[i - 1].dist(points[i]);
            if d <= 1e-12 {
                return Err(PolylineError::NonIncreasing(i));
            }
            arc.push(arc[i - 1] + d);
        }
        Ok(Self { points, arc })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn arc(&self) -> &[f64] {
        &self.arc
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    pub fn start(&self) -> Point {
        self.points[0]
    }

    pub fn end(&self) -> Point {
        *self.points.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.points.len() - 1;
        match self.arc.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// Point at arc-length `s`, clamped to the polyline ends.
    pub fn point_at(&self, s: f64) -> Point {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let seg = self.arc[i + 1] - self.arc[i];
        self.points[i].lerp(self.points[i + 1], (s - self.arc[i]) / seg)
    }

    /// Heading (radians, CCW from +x) of the segment containing `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s.clamp(0.0, self.length()));
        let (a, b) = (self.points[i], self.points[i + 1]);
        (b.y - a.y).atan2(b.x - a.x)
    }

    pub fn project(&self, p: Point) -> Projection {
        let mut best = Projection {
            s: 0.0,
            lateral: 0.0,
            distance: f64::INFINITY,
            segment: 0,
        };
        for i in 0..self.points.len() - 1 {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len2 = dx * dx + dy * dy;
            let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
            let foot = a.lerp(b, t);
            let d = foot.dist(p);
            if d < best.distance {
                let cross = dx * (p.y - a.y) - dy * (p.x - a.x);
                let lateral = if cross >= 0.0 { d } else { -d };
                best = Projection {
                    s: self.arc[i] + t * (self.arc[i + 1] - self.arc[i]),
                    lateral,
                    distance: d,
                    segment: i,
                };
            }
        }
        best
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        self.project(p).distance
    }

    /// Appends another polyline, dropping its first point when it coincides
    /// with this polyline's end.
    pub fn stitch(&mut self, other: &Polyline) {
        let mut iter = other.points.iter().copied().peekable();
        if let Some(first) = iter.peek() {
            if first.dist(self.end()) < 1e-9 {
                iter.next();
            }
        }
        for p in iter {
            let d = self.end().dist(p);
            let last = *self.arc.last().unwrap();
            self.points.push(p);
            self.arc.push(last + d);
        }
    }
}

/// Intersection of segments `a0-a1` and `b0-b1` as parameters `(t, u)` in
/// `[0, 1]`, or `None` when parallel or disjoint.
pub fn segment_intersection(a0: Point, a1: Point, b0: Point, b1: Point) -> Option<(f64, f64)> {
    let r = (a1.x - a0.x, a1.y - a0.y);
    let q = (b1.x - b0.x, b1.y - b0.y);
    let denom = r.0 * q.1 - r.1 * q.0;
    if denom.abs() < 1e-12 {
        return None;
    }
    let w = (b0.x - a0.x, b0.y - a0.y);
    let t = (w.0 * q.1 - w.1 * q.0) / denom;
    let u = (w.0 * r.1 - w.1 * r.0) / denom;
    const EPS: f64 = 1e-12;
    if (-EPS..=1.0 + EPS).contains(&t) && (-EPS..=1.0 + EPS).contains(&u) {
        Some((t.clamp(0.0, 1.0), u.clamp(0.0, 1.0)))
    } else {
        None
    }
}

/// Evenly sampled straight run from `a` to `b` with spacing at most `step`.
pub fn sample_straight(a: Point, b: Point, step: f64) -> Vec<Point> {
    let n = ((a.dist(b) / step).ceil() as usize).max(1);
    (0..=n).map(|i| a.lerp(b, i as f64 / n as f64)).collect()
}

/// Circular arc about `center` from angle `from` to `to` (radians), sampled at
/// arc spacing at most `step`.
pub fn sample_arc(center: Point, radius: f64, from: f64, to: f64, step: f64) -> Vec<Point> {
    let n = (((to - from).abs() * radius / step).ceil() as usize).max(1);
    (0..=n)
        .map(|i| {
            let a = from + (to - from) * i as f64 / n as f64;
            center.offset(radius * a.cos(), radius * a.sin())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l_shape() -> Polyline {
        Polyline::new(vec![
            Point::new(0.0, 0.0),
            Point::new(10.0, 0.0),
            Point::new(10.0, 10.0),
        ])
        .unwrap()
    }

    #[test]
    fn arc_length_and_point_at() {
        let p = l_shape();
        assert_eq!(p.length(), 20.0);
        assert_eq!(p.point_at(15.0), Point::new(10.0, 5.0));
        assert_eq!(p.point_at(-3.0), Point::new(0.0, 0.0));
        assert_eq!(p.point_at(99.0), Point::new(10.0, 10.0));
    }

    #[test]
    fn projection_sign_is_left_positive() {
        let p = l_shape();
        let pr = p.project(Point::new(5.0, 1.0));
        assert_eq!(pr.s, 5.0);
        assert_eq!(pr.lateral, 1.0);
        let pr = p.project(Point::new(5.0, -2.0));
        assert_eq!(pr.lateral, -2.0);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(Polyline::new(vec![Point::default()]).is_err());
        assert!(Polyline::new(vec![Point::default(), Point::default()]).is_err());
    }

    #[test]
    fn segments_cross() {
        let hit = segment_intersection(
            Point::new(0.0, 0.0),
            Point::new(2.0, 2.0),
            Point::new(0.0, 2.0),
            Point::new(2.0, 0.0),
        );
        assert_eq!(hit, Some((0.5, 0.5)));
        assert!(segment_intersection(
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0)
        )
        .is_none());
    }

    #[test]
    fn stitch_drops_shared_vertex() {
        let mut a = Polyline::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]).unwrap();
        let b = Polyline::new(vec![Point::new(1.0, 0.0), Point::new(1.0, 2.0)]).unwrap();
        a.stitch(&b);
        assert_eq!(a.points().len(), 3);
        assert_eq!(a.length(), 3.0);
    }
}
