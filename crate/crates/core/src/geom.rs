//! Planar geometry shared by the map, vectorization and metric code.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotates by -90 degrees (clockwise).
    pub fn rot_cw(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        Vec2::new(self.x + t * (o.x - self.x), self.y + t * (o.y - self.y))
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

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Closest point on segment `a..b` to `p`, returned as the segment parameter in [0, 1].
pub fn project_on_segment(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 <= 0.0 {
        return 0.0;
    }
    ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let t = project_on_segment(p, a, b);
    p.dist(a.lerp(b, t))
}

/// Cumulative arc length at every vertex of a polyline, starting at 0.
pub fn cumulative_lengths(points: &[Vec2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 {
            acc += p.dist(points[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// Point at arc length `s` along a polyline with precomputed cumulative lengths.
/// `s` is clamped to the polyline extent.
pub fn point_at_arc(points: &[Vec2], cum: &[f64], s: f64) -> Vec2 {
    debug_assert_eq!(points.len(), cum.len());
    let total = *cum.last().unwrap_or(&0.0);
    if points.len() == 1 || s <= 0.0 {
        return points[0];
    }
    if s >= total {
        return *points.last().unwrap();
    }
    let seg = segment_at_arc(cum, s);
    let span = cum[seg + 1] - cum[seg];
    if span <= 0.0 {
        return points[seg];
    }
    points[seg].lerp(points[seg + 1], (s - cum[seg]) / span)
}

/// Index of the polyline segment containing arc length `s` (clamped).
pub fn segment_at_arc(cum: &[f64], s: f64) -> usize {
    let n = cum.len();
    if n < 2 {
        return 0;
    }
    // First vertex with cum > s, minus one.
    let idx = cum.partition_point(|&c| c <= s);
    idx.saturating_sub(1).min(n - 2)
}

/// Heading of the polyline tangent at arc length `s`.
pub fn tangent_at_arc(points: &[Vec2], cum: &[f64], s: f64) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let mut seg = segment_at_arc(cum, s);
    // Skip zero-length segments forward, then backward.
    while seg + 1 < points.len() && points[seg + 1].dist(points[seg]) <= 0.0 {
        seg += 1;
    }
    if seg + 1 >= points.len() {
        seg = points.len() - 2;
        while seg > 0 && points[seg + 1].dist(points[seg]) <= 0.0 {
            seg -= 1;
        }
    }
    let d = points[seg + 1] - points[seg];
    if d.norm() <= 0.0 {
        None
    } else {
        Some(d.angle())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI / 2.0 - 4.0 * PI) + PI / 2.0).abs() < 1e-12);
        for i in -100..100 {
            let a = i as f64 * 0.37;
            let w = wrap_angle(a);
            assert!(w > -PI && w <= PI);
            assert!(((a - w) / (2.0 * PI)).round() * 2.0 * PI - (a - w) < 1e-9);
        }
    }

    #[test]
    fn arc_interpolation() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0), Vec2::new(3.0, 4.0)];
        let cum = cumulative_lengths(&pts);
        assert_eq!(cum, vec![0.0, 3.0, 7.0]);
        assert_eq!(point_at_arc(&pts, &cum, 1.5), Vec2::new(1.5, 0.0));
        assert_eq!(point_at_arc(&pts, &cum, 5.0), Vec2::new(3.0, 2.0));
        assert_eq!(point_at_arc(&pts, &cum, 99.0), Vec2::new(3.0, 4.0));
        assert_eq!(segment_at_arc(&cum, 3.0), 1);
        assert!((tangent_at_arc(&pts, &cum, 5.0).unwrap() - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn segment_distance() {
        let a = Vec2::new(0.0, 0.0);
        let b = Vec2::new(0.0, 5.0);
        assert_eq!(point_segment_distance(Vec2::new(2.0, 2.0), a, b), 2.0);
        assert_eq!(point_segment_distance(Vec2::new(0.0, 8.0), a, b), 3.0);
    }
}
