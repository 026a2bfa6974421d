//! Planar geometry primitives: points, axis-aligned rectangles and polylines.
//!
//! Everything in the world model is built from these three shapes, which keeps
//! wall-crossing counts and ray casts exact.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Parametric tolerance used when deduplicating crossings along a segment.
pub const T_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point { x: v[0], y: v[1] }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn dist2(self, o: Point) -> f64 {
        let dx = self.x - o.x;
        let dy = self.y - o.y;
        dx * dx + dy * dy
    }

    /// Bearing from `self` towards `o`, in `[0, 2π)`, measured from +x counter-clockwise.
    pub fn bearing_to(self, o: Point) -> f64 {
        wrap_2pi((o.y - self.y).atan2(o.x - self.x))
    }

    pub fn offset(self, bearing: f64, dist: f64) -> Point {
        Point::new(self.x + dist * bearing.cos(), self.y + dist * bearing.sin())
    }

    pub fn lerp(self, o: Point, t: f64) -> Point {
        Point::new(self.x + (o.x - self.x) * t, self.y + (o.y - self.y) * t)
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_2pi(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r >= 2.0 * PI {
        0.0
    } else {
        r
    }
}

/// Wraps an angle into `[-π, π]`.
pub fn wrap_pi(a: f64) -> f64 {
    let r = wrap_2pi(a + PI) - PI;
    if r < -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Intersection parameter of segment `p→q` with segment `a→b`.
///
/// Returns `t ∈ [0, 1]` along `p→q` when the segments properly intersect.
/// Parallel or degenerate segments return `None`.
pub fn segment_intersection(p: Point, q: Point, a: Point, b: Point) -> Option<f64> {
    let r = (q.x - p.x, q.y - p.y);
    let s = (b.x - a.x, b.y - a.y);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom.abs() < 1e-15 {
        return None;
    }
    let qp = (a.x - p.x, a.y - p.y);
    let t = (qp.0 * s.1 - qp.1 * s.0) / denom;
    let u = (qp.0 * r.1 - qp.1 * r.0) / denom;
    if (-T_EPS..=1.0 + T_EPS).contains(&t) && (-T_EPS..=1.0 + T_EPS).contains(&u) {
        Some(t.clamp(0.0, 1.0))
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite())
            && self.x1 > self.x0
            && self.y1 > self.y0
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    /// Closed containment.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn contains_rect(&self, o: &Rect) -> bool {
        o.x0 >= self.x0 && o.x1 <= self.x1 && o.y0 >= self.y0 && o.y1 <= self.y1
    }

    /// Area of the intersection with `o` (zero when they only touch).
    pub fn overlap_area(&self, o: &Rect) -> f64 {
        let w = self.x1.min(o.x1) - self.x0.max(o.x0);
        let h = self.y1.min(o.y1) - self.y0.max(o.y0);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    pub fn intersection(&self, o: &Rect) -> Option<Rect> {
        let r = Rect::new(
            self.x0.max(o.x0),
            self.y0.max(o.y0),
            self.x1.min(o.x1),
            self.y1.min(o.y1),
        );
        r.is_valid().then_some(r)
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(self.x0, self.y0),
            Point::new(self.x1, self.y0),
            Point::new(self.x1, self.y1),
            Point::new(self.x0, self.y1),
        ]
    }

    pub fn edges(&self) -> [(Point, Point); 4] {
        let c = self.corners();
        [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]
    }

    /// Euclidean distance from `p` to the rectangle (zero inside).
    pub fn distance_to(&self, p: Point) -> f64 {
        let dx = (self.x0 - p.x).max(0.0).max(p.x - self.x1);
        let dy = (self.y0 - p.y).max(0.0).max(p.y - self.y1);
        dx.hypot(dy)
    }

    pub fn closest_point(&self, p: Point) -> Point {
        Point::new(p.x.clamp(self.x0, self.x1), p.y.clamp(self.y0, self.y1))
    }

    /// True when the bounding box of segment `a→b` overlaps this rectangle.
    pub fn bbox_overlaps_segment(&self, a: Point, b: Point) -> bool {
        a.x.min(b.x) <= self.x1
            && a.x.max(b.x) >= self.x0
            && a.y.min(b.y) <= self.y1
            && a.y.max(b.y) >= self.y0
    }

    /// Parameters along `a→b` where the segment crosses the rectangle boundary.
    pub fn boundary_crossings(&self, a: Point, b: Point) -> Vec<f64> {
        let mut ts: Vec<f64> = Vec::new();
        if !self.bbox_overlaps_segment(a, b) {
            return ts;
        }
        for (e0, e1) in self.edges() {
            if let Some(t) = segment_intersection(a, b, e0, e1) {
                ts.push(t);
            }
        }
        dedup_params(&mut ts);
        ts
    }

    /// Distance along the ray `origin + t·(cos θ, sin θ)` at which it first
    /// meets the rectangle (0 when the origin is inside).
    pub fn ray_entry(&self, origin: Point, bearing: f64) -> Option<f64> {
        let d = (bearing.cos(), bearing.sin());
        let mut tmin = 0.0_f64;
        let mut tmax = f64::INFINITY;
        for (o, dir, lo, hi) in [(origin.x, d.0, self.x0, self.x1), (origin.y, d.1, self.y0, self.y1)] {
            if dir.abs() < 1e-15 {
                if o < lo || o > hi {
                    return None;
                }
            } else {
                let t0 = (lo - o) / dir;
                let t1 = (hi - o) / dir;
                let (a, b) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                tmin = tmin.max(a);
                tmax = tmax.min(b);
                if tmin > tmax {
                    return None;
                }
            }
        }
        Some(tmin)
    }
}

/// Sorts and removes near-duplicate segment parameters.
pub fn dedup_params(ts: &mut Vec<f64>) {
    ts.sort_by(|a, b| a.total_cmp(b));
    ts.dedup_by(|a, b| (*a - *b).abs() < T_EPS);
}

/// An open chain of points traversed in order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polyline(pub Vec<Point>);

impl Polyline {
    pub fn new(points: Vec<Point>) -> Self {
        Polyline(points)
    }

    pub fn points(&self) -> &[Point] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<Point> {
        self.0.first().copied()
    }

    pub fn last(&self) -> Option<Point> {
        self.0.last().copied()
    }

    pub fn length(&self) -> f64 {
        self.0.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.0.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn reversed(&self) -> Polyline {
        Polyline(self.0.iter().rev().copied().collect())
    }

    /// Point and tangent heading at arc length `s`, clamped to the polyline.
    pub fn sample(&self, s: f64) -> (Point, f64) {
        let pts = &self.0;
        match pts.len() {
            0 => (Point::default(), 0.0),
            1 => (pts[0], 0.0),
            _ => {
                let mut remaining = s.max(0.0);
                let mut heading = pts[0].bearing_to(pts[1]);
                for w in pts.windows(2) {
                    let len = w[0].dist(w[1]);
                    if len > 0.0 {
                        heading = w[0].bearing_to(w[1]);
                    }
                    if remaining <= len {
                        let t = if len > 0.0 { remaining / len } else { 0.0 };
                        return (w[0].lerp(w[1], t), heading);
                    }
                    remaining -= len;
                }
                (*pts.last().unwrap(), heading)
            }
        }
    }

    /// Arc length of the point on the polyline closest to `p`.
    pub fn project(&self, p: Point) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut acc = 0.0;
        for (a, b) in self.segments() {
            let len2 = a.dist2(b);
            let t = if len2 > 0.0 {
                (((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = a.lerp(b, t);
            let d = q.dist2(p);
            if d < best.0 {
                best = (d, acc + t * len2.sqrt());
            }
            acc += len2.sqrt();
        }
        best.1
    }

    /// Sub-path between arc lengths `s0` and `s1` (reversed when `s1 < s0`).
    pub fn slice(&self, s0: f64, s1: f64) -> Polyline {
        let (lo, hi, rev) = if s1 >= s0 { (s0, s1, false) } else { (s1, s0, true) };
        let mut out = vec![self.sample(lo).0];
        let mut acc = 0.0;
        for w in self.0.windows(2) {
            acc += w[0].dist(w[1]);
            if acc > lo && acc < hi {
                out.push(w[1]);
            }
        }
        out.push(self.sample(hi).0);
        if rev {
            out.reverse();
        }
        Polyline(out)
    }

    /// True when two non-adjacent segments intersect.
    pub fn self_intersects(&self) -> bool {
        let segs: Vec<_> = self.segments().collect();
        for i in 0..segs.len() {
            for j in (i + 2)..segs.len() {
                if i == 0 && j == segs.len() - 1 && self.0.first() == self.0.last() {
                    continue;
                }
                if segment_intersection(segs[i].0, segs[i].1, segs[j].0, segs[j].1).is_some() {
                    return true;
                }
            }
        }
        false
    }
}
