//! Planar geometry in world meters.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Mirror a direction across a line with unit direction `axis`.
    pub fn reflect_across(self, axis: Vec2) -> Vec2 {
        axis * (2.0 * self.dot(axis)) - self
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn of_points(pts: &[Vec2]) -> Self {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in pts {
            min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
            max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
        }
        Self { min, max }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn overlaps(&self, o: &Aabb, gap: f64) -> bool {
        self.min.x < o.max.x + gap
            && o.min.x < self.max.x + gap
            && self.min.y < o.max.y + gap
            && o.min.y < self.max.y + gap
    }
}

/// Ray `origin + t * dir` against segment `a..b`. Returns `(t, u)` with
/// `t >= 0` the ray parameter and `u in [0, 1]` the position along the segment.
pub fn ray_segment(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<(f64, f64)> {
    let e = b - a;
    let denom = dir.cross(e);
    if denom.abs() < 1e-12 {
        return None;
    }
    let ao = a - origin;
    let t = ao.cross(e) / denom;
    let u = ao.cross(dir) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some((t, u))
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// True when the open segments `p1..p2` and `q1..q2` cross at a single interior point.
pub fn segments_cross(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = (q2 - q1).cross(p1 - q1);
    let d2 = (q2 - q1).cross(p2 - q1);
    let d3 = (p2 - p1).cross(q1 - p1);
    let d4 = (p2 - p1).cross(q2 - p1);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Length of the part of segment `a..b` inside a disk.
pub fn chord_in_disk(a: Vec2, b: Vec2, center: Vec2, radius: f64) -> Option<(f64, f64)> {
    let d = b - a;
    let len = d.norm();
    if len == 0.0 {
        return None;
    }
    let u = d * (1.0 / len);
    let f = a - center;
    let bq = f.dot(u);
    let c = f.dot(f) - radius * radius;
    let disc = bq * bq - c;
    if disc <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t0 = (-bq - s).max(0.0);
    let t1 = (-bq + s).min(len);
    (t1 > t0).then_some((t0, t1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_hits_wall() {
        let hit = ray_segment(
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(10.0, -5.0),
            Vec2::new(10.0, 5.0),
        );
        assert_eq!(hit, Some((10.0, 0.5)));
        assert!(ray_segment(Vec2::new(0.0, 0.0), Vec2::new(-1.0, 0.0), Vec2::new(10.0, -5.0), Vec2::new(10.0, 5.0)).is_none());
    }

    #[test]
    fn polygon_membership() {
        // L shape
        let poly = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 2.0),
            Vec2::new(3.0, 2.0),
            Vec2::new(3.0, 3.0),
            Vec2::new(0.0, 3.0),
        ];
        assert!(point_in_polygon(Vec2::new(0.5, 0.5), &poly));
        assert!(point_in_polygon(Vec2::new(2.5, 2.5), &poly));
        assert!(!point_in_polygon(Vec2::new(2.5, 1.0), &poly));
    }

    #[test]
    fn reflection_and_chord() {
        let r = Vec2::new(1.0, -1.0).reflect_across(Vec2::new(1.0, 0.0));
        assert!((r.x - 1.0).abs() < 1e-12 && (r.y - 1.0).abs() < 1e-12);
        let (t0, t1) = chord_in_disk(Vec2::new(-5.0, 0.0), Vec2::new(5.0, 0.0), Vec2::new(0.0, 0.0), 3.0).unwrap();
        assert!((t0 - 2.0).abs() < 1e-12 && (t1 - 8.0).abs() < 1e-12);
    }
}
