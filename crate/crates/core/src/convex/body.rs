//! Convex bodies `K` containing the origin and their support functions.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{ConvexError, Vec2};

/// A closed convex set with `0` in its interior.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexBody {
    /// Centered ball of radius `delta`, in dimension 1 or 2.
    Ball { dim: usize, delta: f64 },
    /// `[lo, hi]` with `lo < 0 < hi`.
    Interval { lo: f64, hi: f64 },
    /// Convex polygon; vertices stored counter-clockwise, hull-reduced.
    Polytope { vertices: Vec<Vec2> },
}

/// JSON form of a body: `{"kind": "ball", "delta": 0.5}` and friends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BodySpec {
    Ball {
        delta: f64,
        #[serde(default)]
        dim: Option<usize>,
    },
    Interval {
        lo: f64,
        hi: f64,
    },
    Polytope {
        vertices: Vec<[f64; 2]>,
    },
}

impl ConvexBody {
    pub fn ball(dim: usize, delta: f64) -> Result<Self, ConvexError> {
        if !(dim == 1 || dim == 2) {
            return Err(ConvexError::Dimension { expected: 2, got: dim });
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(ConvexError::invalid(format!("ball radius must be positive, got {delta}")));
        }
        Ok(Self::Ball { dim, delta })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self, ConvexError> {
        if !(lo < 0.0 && hi > 0.0 && lo.is_finite() && hi.is_finite()) {
            return Err(ConvexError::invalid(format!(
                "interval [{lo}, {hi}] must contain 0 in its interior"
            )));
        }
        Ok(Self::Interval { lo, hi })
    }

    /// Builds the convex hull of `points`; the origin must lie strictly inside it.
    pub fn polytope(points: &[[f64; 2]]) -> Result<Self, ConvexError> {
        let pts: Vec<Vec2> = points.iter().map(|p| Vector2::new(p[0], p[1])).collect();
        if pts.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(ConvexError::invalid("polytope vertices must be finite"));
        }
        let hull = convex_hull(&pts);
        if hull.len() < 3 {
            return Err(ConvexError::invalid("polytope needs at least 3 affinely independent vertices"));
        }
        let origin_inside = (0..hull.len()).all(|i| {
            let a = hull[i];
            let b = hull[(i + 1) % hull.len()];
            cross(b - a, -a) > 1e-12
        });
        if !origin_inside {
            return Err(ConvexError::invalid("polytope must contain 0 in its interior"));
        }
        Ok(Self::Polytope { vertices: hull })
    }

    pub fn from_spec(spec: &BodySpec, dim: usize) -> Result<Self, ConvexError> {
        match spec {
            BodySpec::Ball { delta, dim: d } => Self::ball(d.unwrap_or(dim), *delta),
            BodySpec::Interval { lo, hi } => Self::interval(*lo, *hi),
            BodySpec::Polytope { vertices } => Self::polytope(vertices),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Ball { dim, .. } => *dim,
            Self::Interval { .. } => 1,
            Self::Polytope { .. } => 2,
        }
    }

    /// `sup_{p in K} v . p` for a unit vector `v`.
    pub fn support_value(&self, v: &[f64]) -> Result<f64, ConvexError> {
        if v.len() != self.dim() {
            return Err(ConvexError::Dimension { expected: self.dim(), got: v.len() });
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(ConvexError::NotUnit { norm });
        }
        let v = super::to_vec2(v);
        Ok(self.support(v))
    }

    /// Support function without the unit-length check.
    pub(crate) fn support(&self, v: Vec2) -> f64 {
        match self {
            Self::Ball { delta, .. } => delta * v.norm(),
            Self::Interval { lo, hi } => {
                if v.x >= 0.0 {
                    hi * v.x
                } else {
                    lo * v.x
                }
            }
            Self::Polytope { vertices } => vertices.iter().map(|q| v.dot(q)).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Exact membership test.
    pub fn contains(&self, p: &[f64]) -> bool {
        let p = super::to_vec2(p);
        match self {
            Self::Ball { delta, .. } => p.norm() <= *delta,
            Self::Interval { lo, hi } => *lo <= p.x && p.x <= *hi,
            Self::Polytope { vertices } => (0..vertices.len()).all(|i| {
                let a = vertices[i];
                let b = vertices[(i + 1) % vertices.len()];
                cross(b - a, p - a) >= 0.0
            }),
        }
    }

    /// `max_{|v|=1} { p . v - support(v) }` together with the set of maximizing
    /// directions (more than one only at kinks).
    pub(crate) fn derived_constraint(&self, p: Vec2) -> (f64, Vec<Vec2>) {
        match self {
            Self::Ball { delta, .. } => {
                let n = p.norm();
                if n == 0.0 {
                    (-delta, vec![Vec2::zeros()])
                } else {
                    (n - delta, vec![p / n])
                }
            }
            Self::Interval { lo, hi } => {
                let right = p.x - hi;
                let left = -p.x + lo;
                if right > left {
                    (right, vec![Vector2::new(1.0, 0.0)])
                } else if left > right {
                    (left, vec![Vector2::new(-1.0, 0.0)])
                } else {
                    (right, vec![Vector2::new(1.0, 0.0), Vector2::new(-1.0, 0.0)])
                }
            }
            Self::Polytope { vertices } => {
                // p.v - max_i v.x_i = min_i v.(p - x_i). Its maximum over the circle sits either
                // where one piece peaks, v = (p - x_i)/|p - x_i|, or where two pieces tie,
                // v orthogonal to x_i - x_j.
                let objective = |v: Vec2| vertices.iter().map(|x| v.dot(&(p - x))).fold(f64::INFINITY, f64::min);
                let mut candidates = Vec::with_capacity(vertices.len() * vertices.len());
                for x in vertices {
                    let d = p - x;
                    let n = d.norm();
                    if n > 0.0 {
                        candidates.push(d / n);
                    }
                }
                for i in 0..vertices.len() {
                    for j in i + 1..vertices.len() {
                        let e = vertices[j] - vertices[i];
                        let n = e.norm();
                        if n > 0.0 {
                            let normal = Vector2::new(-e.y, e.x) / n;
                            candidates.push(normal);
                            candidates.push(-normal);
                        }
                    }
                }
                let scored: Vec<(f64, Vec2)> = candidates.into_iter().map(|v| (objective(v), v)).collect();
                let best = scored.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
                let tol = 1e-12 * (1.0 + best.abs());
                let mut maximizers: Vec<Vec2> = Vec::new();
                for (val, v) in scored {
                    if val >= best - tol && !maximizers.iter().any(|m| (m - v).norm() < 1e-12) {
                        maximizers.push(v);
                    }
                }
                (best, maximizers)
            }
        }
    }

    /// Signed Euclidean distance to the boundary of `K` (negative inside).
    /// Computed geometrically, independent of the support-function route.
    pub fn signed_distance(&self, p: &[f64]) -> f64 {
        let q = super::to_vec2(p);
        match self {
            Self::Ball { delta, .. } => q.norm() - delta,
            Self::Interval { lo, hi } => (q.x - hi).max(lo - q.x),
            Self::Polytope { vertices } => {
                let d = (0..vertices.len())
                    .map(|i| segment_distance(q, vertices[i], vertices[(i + 1) % vertices.len()]))
                    .fold(f64::INFINITY, f64::min);
                if self.contains(p) {
                    -d
                } else {
                    d
                }
            }
        }
    }
}

#[inline]
pub(crate) fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    (p - closest_on_segment(p, a, b)).norm()
}

fn closest_on_segment(p: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return a;
    }
    let s = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * s
}

/// Minimal-norm element of the convex hull of a small planar point set.
pub(crate) fn min_norm_in_hull(points: &[Vec2]) -> Vec2 {
    match points.len() {
        0 => Vec2::zeros(),
        1 => points[0],
        _ => {
            let hull = convex_hull(points);
            if hull.len() >= 3 {
                let inside = (0..hull.len()).all(|i| cross(hull[(i + 1) % hull.len()] - hull[i], -hull[i]) >= 0.0);
                if inside {
                    return Vec2::zeros();
                }
            }
            let mut best = points[0];
            for i in 0..points.len() {
                for j in i..points.len() {
                    let c = closest_on_segment(Vec2::zeros(), points[i], points[j]);
                    if c.norm() < best.norm() {
                        best = c;
                    }
                }
            }
            best
        }
    }
}

/// Andrew's monotone chain; counter-clockwise, collinear points dropped.
pub(crate) fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a == b);
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Vec2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 1] - lower[lower.len() - 2], p - lower[lower.len() - 2]) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 1] - upper[upper.len() - 2], p - upper[upper.len() - 2]) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}
