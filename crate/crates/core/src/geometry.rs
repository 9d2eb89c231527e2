//! Small 2D geometry toolkit shared by the scene graph, the modulation
//! engine, the controller and collision detection. Everything here is plain
//! `f64` math with no randomness, so results are bit-stable across runs.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

pub const PI: f64 = std::f64::consts::PI;
pub const TAU: f64 = std::f64::consts::TAU;

/// Normalize an angle into `[-pi, pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// 2D vector / point. Serialized as a `[x, y]` pair to keep map and log
/// files compact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2 { x: v[0], y: v[1] }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector pointing along `heading` (radians, x-axis = 0).
    pub fn from_heading(heading: f64) -> Self {
        Vec2::new(heading.cos(), heading.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the cross product; positive when `o` is to the left.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Rotate counterclockwise by `angle` radians.
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand normal (counterclockwise perpendicular).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n < 1e-12 {
            Vec2::new(1.0, 0.0)
        } else {
            Vec2::new(self.x / n, self.y / n)
        }
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
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
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length along the polyline at the closest point.
    pub s: f64,
    /// Signed lateral offset; positive to the left of travel direction.
    pub lateral: f64,
    /// Unsigned distance from the query point to the polyline.
    pub distance: f64,
}

/// Piecewise-linear curve with cached cumulative arc lengths. Used for lane
/// centerlines and routes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pts: Vec<Vec2>,
    cum: Vec<f64>,
}

impl Polyline {
    /// Build from at least two points. Zero-length segments are tolerated
    /// but contribute nothing to arc length.
    pub fn new(pts: Vec<Vec2>) -> Self {
        assert!(pts.len() >= 2, "polyline needs at least two points");
        let mut cum = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in pts.windows(2) {
            acc += w[0].dist(w[1]);
            cum.push(acc);
        }
        Polyline { pts, cum }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.pts
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Point at arc length `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.length());
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.pts.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.pts.len() - 2),
        };
        let seg = self.cum[i + 1] - self.cum[i];
        if seg < 1e-12 {
            return self.pts[i];
        }
        self.pts[i].lerp(self.pts[i + 1], (s - self.cum[i]) / seg)
    }

    /// Unit tangent at arc length `s` (taken from the containing segment).
    pub fn tangent_at(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.length());
        let mut i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.pts.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.pts.len() - 2),
        };
        // Skip degenerate segments so the tangent stays meaningful.
        while i + 2 < self.pts.len() && self.pts[i].dist(self.pts[i + 1]) < 1e-12 {
            i += 1;
        }
        (self.pts[i + 1] - self.pts[i]).normalized()
    }

    /// Closest-point projection of `p`. Ties between adjacent segments
    /// resolve to the earlier arc length.
    pub fn project(&self, p: Vec2) -> Projection {
        let mut best = Projection {
            s: 0.0,
            lateral: 0.0,
            distance: f64::INFINITY,
        };
        for i in 0..self.pts.len() - 1 {
            let a = self.pts[i];
            let b = self.pts[i + 1];
            let ab = b - a;
            let len2 = ab.dot(ab);
            let t = if len2 < 1e-24 {
                0.0
            } else {
                (p - a).dot(ab).clamp(0.0, len2) / len2
            };
            let q = a + ab * t;
            let d = p.dist(q);
            if d < best.distance - 1e-12 {
                let dir = ab.normalized();
                best = Projection {
                    s: self.cum[i] + ab.norm() * t,
                    lateral: dir.cross(p - a),
                    distance: d,
                };
            }
        }
        best
    }

    /// Resample so that no segment exceeds `max_step` meters. Original
    /// vertices are preserved; interpolated vertices are inserted between
    /// them, which gives later per-vertex distortions enough resolution.
    pub fn resampled(&self, max_step: f64) -> Polyline {
        assert!(max_step > 0.0);
        let mut out = vec![self.pts[0]];
        for w in self.pts.windows(2) {
            let d = w[0].dist(w[1]);
            if d < 1e-12 {
                continue;
            }
            let n = (d / max_step).ceil() as usize;
            for k in 1..=n {
                out.push(w[0].lerp(w[1], k as f64 / n as f64));
            }
        }
        if out.len() < 2 {
            out.push(self.pts[self.pts.len() - 1]);
        }
        Polyline::new(out)
    }

    /// Sub-polyline covering the arc interval `[s0, s1]`, clamped to the
    /// curve. Returns the clipped points plus the arc length of the first
    /// returned point in the original parametrisation.
    pub fn clip_arc(&self, s0: f64, s1: f64) -> (Vec<Vec2>, f64) {
        let len = self.length();
        let s0 = s0.clamp(0.0, len);
        let s1 = s1.clamp(0.0, len);
        if s1 - s0 < 1e-9 {
            let p = self.point_at(s0);
            return (vec![p, p + self.tangent_at(s0) * 0.01], s0);
        }
        let mut pts = vec![self.point_at(s0)];
        for (i, &c) in self.cum.iter().enumerate() {
            if c > s0 + 1e-9 && c < s1 - 1e-9 {
                pts.push(self.pts[i]);
            }
        }
        pts.push(self.point_at(s1));
        (pts, s0)
    }
}

/// Oriented bounding box (center, half extents, heading).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    /// Half length along the heading axis.
    pub half_len: f64,
    /// Half width across the heading axis.
    pub half_wid: f64,
    pub heading: f64,
}

impl Obb {
    pub fn corners(&self) -> [Vec2; 4] {
        let u = Vec2::from_heading(self.heading);
        let v = u.perp();
        let l = u * self.half_len;
        let w = v * self.half_wid;
        [
            self.center + l + w,
            self.center + l - w,
            self.center - l - w,
            self.center - l + w,
        ]
    }

    /// Separating-axis overlap test for two oriented rectangles. Touching
    /// boundaries count as overlap.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let ca = self.corners();
        let cb = other.corners();
        let axes = [
            Vec2::from_heading(self.heading),
            Vec2::from_heading(self.heading).perp(),
            Vec2::from_heading(other.heading),
            Vec2::from_heading(other.heading).perp(),
        ];
        for axis in axes {
            let pa = project_corners(&ca, axis);
            let pb = project_corners(&cb, axis);
            if pa.1 < pb.0 || pb.1 < pa.0 {
                return false;
            }
        }
        true
    }

    /// Worst-case separation margin over the four SAT axes. Negative means
    /// the rectangles overlap by at least `-margin` on every axis.
    pub fn separation_margin(&self, other: &Obb) -> f64 {
        let ca = self.corners();
        let cb = other.corners();
        let axes = [
            Vec2::from_heading(self.heading),
            Vec2::from_heading(self.heading).perp(),
            Vec2::from_heading(other.heading),
            Vec2::from_heading(other.heading).perp(),
        ];
        let mut margin = f64::NEG_INFINITY;
        for axis in axes {
            let pa = project_corners(&ca, axis);
            let pb = project_corners(&cb, axis);
            let gap = (pb.0 - pa.1).max(pa.0 - pb.1);
            margin = margin.max(gap);
        }
        margin
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let rel = (p - self.center).rotated(-self.heading);
        rel.x.abs() <= self.half_len && rel.y.abs() <= self.half_wid
    }
}

fn project_corners(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &c in corners {
        let d = c.dot(axis);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}
