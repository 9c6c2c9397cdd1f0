//! Small 2D geometry toolkit shared by the solver and the scenarios.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub type Vec2 = Vector2<f64>;

/// Axis-aligned rectangle. Containment is inclusive on `min`, exclusive on `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(Vec2::new(x0, y0), Vec2::new(x1, y1))
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn is_empty(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0)
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        p.x >= self.min.x && p.x < self.max.x && p.y >= self.min.y && p.y < self.max.y
    }

    pub fn corners(&self) -> [Vec2; 4] {
        [
            self.min,
            Vec2::new(self.max.x, self.min.y),
            self.max,
            Vec2::new(self.min.x, self.max.y),
        ]
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.min.x >= self.min.x
            && other.min.y >= self.min.y
            && other.max.x <= self.max.x
            && other.max.y <= self.max.y
    }
}

/// A line segment with the velocity of each endpoint (rigid motion over one step).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingSegment {
    pub a: Vec2,
    pub b: Vec2,
    pub va: Vec2,
    pub vb: Vec2,
}

impl MovingSegment {
    pub fn fixed(a: Vec2, b: Vec2) -> Self {
        Self {
            a,
            b,
            va: Vec2::zeros(),
            vb: Vec2::zeros(),
        }
    }

    pub fn moving(a: Vec2, b: Vec2, velocity: Vec2) -> Self {
        Self {
            a,
            b,
            va: velocity,
            vb: velocity,
        }
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.a + self.b) * 0.5
    }
}

pub(crate) fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Closest point on segment `ab` to `p`, and the segment parameter in `[0, 1]`.
pub(crate) fn closest_on_segment(p: &Vec2, a: &Vec2, b: &Vec2) -> (Vec2, f64) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= 0.0 {
        return (*a, 0.0);
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (a + ab * t, t)
}

/// Twice the signed area; positive for counter-clockwise vertex order.
pub fn signed_area2(vertices: &[Vec2]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| cross(&vertices[i], &vertices[(i + 1) % n]))
        .sum()
}

/// Even-odd point-in-polygon test; points on an edge count as inside.
pub fn point_in_polygon(p: &Vec2, vertices: &[Vec2]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let (c, _) = closest_on_segment(p, &a, &b);
        if (c - p).norm() <= 1e-12 {
            return true;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (vi, vj) = (vertices[i], vertices[j]);
        if (vi.y > p.y) != (vj.y > p.y) {
            let x_cross = vj.x + (p.y - vj.y) * (vi.x - vj.x) / (vi.y - vj.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn segments_cross(p1: &Vec2, p2: &Vec2, q1: &Vec2, q2: &Vec2) -> bool {
    let d1 = cross(&(p2 - p1), &(q1 - p1));
    let d2 = cross(&(p2 - p1), &(q2 - p1));
    let d3 = cross(&(q2 - q1), &(p1 - q1));
    let d4 = cross(&(q2 - q1), &(p2 - q1));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: &Vec2, b: &Vec2, p: &Vec2, d: f64| {
        d == 0.0
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
    };
    on(p1, p2, q1, d1) || on(p1, p2, q2, d2) || on(q1, q2, p1, d3) || on(q1, q2, p2, d4)
}

/// True when any two non-adjacent edges of the closed polygon intersect.
pub fn is_self_intersecting(vertices: &[Vec2]) -> bool {
    let n = vertices.len();
    for i in 0..n {
        let (a1, a2) = (vertices[i], vertices[(i + 1) % n]);
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (b1, b2) = (vertices[j], vertices[(j + 1) % n]);
            if segments_cross(&a1, &a2, &b1, &b2) {
                return true;
            }
        }
    }
    false
}

/// Rotates `p` about `pivot` by `angle` radians (counter-clockwise positive).
pub fn rotate_about(p: &Vec2, pivot: &Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    let d = p - pivot;
    pivot + Vec2::new(c * d.x - s * d.y, s * d.x + c * d.y)
}
