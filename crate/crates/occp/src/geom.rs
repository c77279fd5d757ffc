//! Planar geometry: lanes, occluder polygons, and line-of-sight tests.

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Straight lane parameterized by arc length from `origin` along the unit
/// direction `dir`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Lane {
    pub id: u32,
    pub origin: Point,
    pub dir: Point,
    pub width: f64,
}

impl Lane {
    pub fn point_at(&self, s: f64) -> Point {
        [self.origin[0] + s * self.dir[0], self.origin[1] + s * self.dir[1]]
    }

    /// Arc-length coordinate of the projection of `p` onto the centerline.
    pub fn project(&self, p: Point) -> f64 {
        let d = sub(p, self.origin);
        d[0] * self.dir[0] + d[1] * self.dir[1]
    }

    /// Arc position where this lane's centerline crosses the other's, if the
    /// lanes are not parallel. Returns (s_self, s_other).
    pub fn crossing(&self, other: &Lane) -> Option<(f64, f64)> {
        let denom = cross(self.dir, other.dir);
        if denom.abs() < 1e-9 {
            return None;
        }
        let d = sub(other.origin, self.origin);
        let s_self = cross(d, other.dir) / denom;
        let s_other = cross(d, self.dir) / denom;
        Some((s_self, s_other))
    }
}

/// Simple polygon given by its vertices in order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn rect(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self { vertices: vec![[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]] }
    }

    /// Axis-aligned box centered at `c` with half extents `hx`, `hy`.
    pub fn centered_box(c: Point, hx: f64, hy: f64) -> Self {
        Self::rect(c[0] - hx, c[1] - hy, c[0] + hx, c[1] + hy)
    }

    pub fn contains(&self, p: Point) -> bool {
        // Even-odd rule.
        let mut inside = false;
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// True when segment pq touches the polygon interior or boundary.
    pub fn blocks(&self, p: Point, q: Point) -> bool {
        if self.contains(p) || self.contains(q) {
            return true;
        }
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if segments_intersect(p, q, a, b) {
                return true;
            }
        }
        false
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    cross(sub(b, a), sub(c, a))
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0]) - 1e-12
        && p[0] <= a[0].max(b[0]) + 1e-12
        && p[1] >= a[1].min(b[1]) - 1e-12
        && p[1] <= a[1].max(b[1]) + 1e-12
}

pub fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Line of sight between two points against a set of blocking polygons.
pub fn line_of_sight(from: Point, to: Point, blockers: &[Polygon]) -> bool {
    blockers.iter().all(|b| !b.blocks(from, to))
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lane_param_and_projection() {
        let lane = Lane { id: 0, origin: [0.0, 3.75], dir: [1.0, 0.0], width: 3.75 };
        assert_eq!(lane.point_at(5.0), [5.0, 3.75]);
        assert_eq!(lane.project([7.0, 0.0]), 7.0);
    }

    #[test]
    fn lane_crossing() {
        let a = Lane { id: 0, origin: [-50.0, 0.0], dir: [1.0, 0.0], width: 3.75 };
        let b = Lane { id: 1, origin: [0.0, 70.0], dir: [0.0, -1.0], width: 3.75 };
        let (sa, sb) = a.crossing(&b).unwrap();
        assert_eq!(sa, 50.0);
        assert_eq!(sb, 70.0);
        let c = Lane { id: 2, origin: [0.0, 3.75], dir: [1.0, 0.0], width: 3.75 };
        assert!(a.crossing(&c).is_none());
    }

    #[test]
    fn polygon_contains_and_blocks() {
        let p = Polygon::rect(-1.0, -1.0, 1.0, 1.0);
        assert!(p.contains([0.0, 0.0]));
        assert!(!p.contains([2.0, 0.0]));
        assert!(p.blocks([-2.0, 0.0], [2.0, 0.0]));
        assert!(!p.blocks([-2.0, 2.0], [2.0, 2.0]));
        assert!(p.blocks([0.0, 0.0], [5.0, 5.0]));
    }

    #[test]
    fn line_of_sight_respects_blockers() {
        let b = vec![Polygon::rect(0.0, 0.0, 1.0, 1.0)];
        assert!(!line_of_sight([-1.0, 0.5], [2.0, 0.5], &b));
        assert!(line_of_sight([-1.0, 2.0], [2.0, 2.0], &b));
    }
}
