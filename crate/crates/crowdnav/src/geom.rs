//! Planar geometry shared by every other module.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

/// 2D point or vector in meters (or m/s when used as a velocity).
pub type Vec2 = Vector2<f64>;

/// Wraps an angle to the interval `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let r = (PI - a).rem_euclid(2.0 * PI);
    PI - r
}

/// Shortest signed angular difference `a - b`, wrapped to `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Counterclockwise perpendicular `(-y, x)`.
pub fn perp_ccw(v: Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

/// 2D cross product (z-component of the 3D cross product).
pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// A static obstacle: a line segment between two distinct endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub a: Vec2,
    pub b: Vec2,
}

impl LineSegment {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        debug_assert!(a != b, "degenerate segment: endpoints coincide");
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

/// Euclidean projection of `p` onto the segment, clamped to the endpoints.
pub fn closest_point_on_segment(p: Vec2, seg: &LineSegment) -> Vec2 {
    let d = seg.b - seg.a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return seg.a;
    }
    let t = ((p - seg.a).dot(&d) / len2).clamp(0.0, 1.0);
    seg.a + d * t
}

/// Distance from `p` to the segment.
pub fn dist_to_segment(p: Vec2, seg: &LineSegment) -> f64 {
    (p - closest_point_on_segment(p, seg)).norm()
}
