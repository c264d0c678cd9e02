//! Planar polygon helpers in the (angle, velocity) plane.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub z1: f64,
    pub z2: f64,
}

impl Point {
    pub const fn new(z1: f64, z2: f64) -> Self {
        Point { z1, z2 }
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point::new(v[0], v[1])
    }
}

/// Signed shoelace area; positive for counter-clockwise rings.
pub fn signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        s += a.z1 * b.z2 - b.z1 * a.z2;
    }
    0.5 * s
}

/// Even-odd point-in-polygon test (ray cast along +z1).
pub fn point_in_ring(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.z2 > p.z2) != (b.z2 > p.z2) {
            let x = a.z1 + (p.z2 - a.z2) * (b.z1 - a.z1) / (b.z2 - a.z2);
            if p.z1 < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Euclidean distance from `p` to segment `ab`.
pub fn segment_distance(a: Point, b: Point, p: Point) -> f64 {
    let (dx, dy) = (b.z1 - a.z1, b.z2 - a.z2);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.z1 - a.z1) * dx + (p.z2 - a.z2) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.z1 + t * dx, a.z2 + t * dy);
    ((p.z1 - cx).powi(2) + (p.z2 - cy).powi(2)).sqrt()
}

/// Distance from `p` to the closed ring's boundary.
pub fn ring_distance(ring: &[Point], p: Point) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| segment_distance(ring[i], ring[(i + 1) % n], p))
        .fold(f64::INFINITY, f64::min)
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.z1 - a.z1) * (c.z2 - a.z2) - (b.z2 - a.z2) * (c.z1 - a.z1)
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// True when no two non-adjacent edges properly cross. Quadratic; meant for
/// tests and diagnostics.
pub fn is_simple(ring: &[Point]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a, b, ring[j], ring[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}
