//! Proximal maps behind the inf-convolution, and second-difference checks on `H^t`.

use nalgebra::Matrix2;
use serde::Serialize;

use super::{body::ConvexBody, ConstraintFunction, ConvexError, Kind, Vec2};

const NEWTON_CAP: usize = 200;
const GOLDEN_TOL: f64 = 1e-12;

/// `argmin_q H(q) + |p - q|^2 / (2t)`.
pub(crate) fn prox(base: &ConstraintFunction, p: Vec2, t: f64) -> Result<Vec2, ConvexError> {
    match &base.kind {
        Kind::NormMinusConstant { weight, .. } => Ok(shrink(p, weight * t)),
        Kind::SupportDerived(ConvexBody::Ball { .. }) => Ok(shrink(p, t)),
        Kind::SupportDerived(ConvexBody::Interval { lo, hi }) => {
            // H(q) = |q - m| - (hi - lo)/2
            let m = 0.5 * (lo + hi);
            let d = p.x - m;
            let s = d.signum() * (d.abs() - t).max(0.0);
            Ok(Vec2::new(m + s, 0.0))
        }
        Kind::QuadraticForm { matrix, .. } => {
            let a = Matrix2::identity() + matrix * (2.0 * t);
            if base.dim == 1 {
                Ok(Vec2::new(p.x / a[(0, 0)], 0.0))
            } else {
                a.lu().solve(&p).ok_or_else(|| ConvexError::invalid("singular prox system"))
            }
        }
        Kind::Affine { slope, .. } => Ok(p - slope * t),
        _ => numeric_prox(base, p, t),
    }
}

/// Soft threshold towards the origin.
fn shrink(p: Vec2, tau: f64) -> Vec2 {
    let n = p.norm();
    if n <= tau {
        Vec2::zeros()
    } else {
        p * ((n - tau) / n)
    }
}

fn objective(base: &ConstraintFunction, p: Vec2, t: f64, q: Vec2) -> Result<f64, ConvexError> {
    Ok(base.eval(q)? + (p - q).norm_squared() / (2.0 * t))
}

/// Generic prox. The minimizer satisfies `(p - q)/t in dH(q)`, and monotonicity of
/// `dH` against `g_p in dH(p)` gives `|q - (p - t g_p / 2)| <= t |g_p| / 2`.
fn numeric_prox(base: &ConstraintFunction, p: Vec2, t: f64) -> Result<Vec2, ConvexError> {
    let gp = base.grad(p)?;
    let center = p - gp * (0.5 * t);
    let radius = 0.5 * t * gp.norm();
    if radius == 0.0 {
        return Ok(p);
    }
    if base.dim == 1 {
        let (x, _) = golden(center.x - radius, center.x + radius, |x| objective(base, p, t, Vec2::new(x, 0.0)))?;
        return Ok(Vec2::new(x, 0.0));
    }
    if let Some(q) = projected_newton(base, p, t, center, radius)? {
        return Ok(q);
    }
    nested_golden(base, p, t, center, radius)
}

/// Damped Newton on the strongly convex objective, iterates projected onto the
/// localization ball. Returns `None` when curvature is unavailable or progress stalls.
fn projected_newton(
    base: &ConstraintFunction,
    p: Vec2,
    t: f64,
    center: Vec2,
    radius: f64,
) -> Result<Option<Vec2>, ConvexError> {
    let project = |q: Vec2| {
        let d = q - center;
        let n = d.norm();
        if n > radius {
            center + d * (radius / n)
        } else {
            q
        }
    };
    let mut q = center;
    let mut fq = objective(base, p, t, q)?;
    for _ in 0..NEWTON_CAP {
        let g = base.grad(q)? + (q - p) / t;
        if g.norm() * t <= 1e-13 * (1.0 + q.norm()) {
            return Ok(Some(q));
        }
        let hess = match base.hess(q)? {
            Some(h) => h + Matrix2::identity() / t,
            None => return Ok(None),
        };
        let step = match hess.cholesky() {
            Some(c) => -c.solve(&g),
            None => return Ok(None),
        };
        let mut s = 1.0;
        let mut accepted = None;
        while s > 1e-8 {
            let cand = project(q + step * s);
            let fc = objective(base, p, t, cand)?;
            if fc <= fq {
                accepted = Some((cand, fc));
                break;
            }
            s *= 0.5;
        }
        let Some((cand, fc)) = accepted else {
            return Ok(None);
        };
        let moved = (cand - q).norm();
        q = cand;
        fq = fc;
        if moved <= 1e-14 * (1.0 + q.norm()) {
            return Ok(Some(q));
        }
    }
    Err(ConvexError::NonConvergence { iterations: NEWTON_CAP })
}

/// Minimizes over `x` the inner minimum over `y`, both by golden section.
fn nested_golden(base: &ConstraintFunction, p: Vec2, t: f64, center: Vec2, radius: f64) -> Result<Vec2, ConvexError> {
    let inner = |x: f64| golden(center.y - radius, center.y + radius, |y| objective(base, p, t, Vec2::new(x, y)));
    let (x, _) = golden(center.x - radius, center.x + radius, |x| inner(x).map(|r| r.1))?;
    let (y, _) = inner(x)?;
    Ok(Vec2::new(x, y))
}

/// Golden-section search for a unimodal function; returns `(argmin, min)`.
fn golden<F>(mut a: f64, mut b: f64, mut f: F) -> Result<(f64, f64), ConvexError>
where
    F: FnMut(f64) -> Result<f64, ConvexError>,
{
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let scale = 1.0 + a.abs().max(b.abs());
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > GOLDEN_TOL * scale {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// One `(p, z)` probe for the second-difference checks.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeSample {
    pub p: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub t: f64,
    /// Curvature `theta` of the base used for the lower bound, if positive.
    pub theta: Option<f64>,
    pub second_differences: Vec<f64>,
    /// Largest `Delta - |z|^2/t`; nonpositive when the upper bound holds.
    pub max_upper_violation: f64,
    /// Largest `theta|z|^2/(1+t theta) - Delta`, when `theta` is present.
    pub max_lower_violation: Option<f64>,
    /// Largest `Delta - |D^2 H|_{B_{Q+|z|}} |z|^2`, when the base has a Hessian everywhere sampled.
    pub max_locality_violation: Option<f64>,
}

impl EnvelopeReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_upper_violation <= tol
            && self.max_lower_violation.is_none_or(|v| v <= tol)
            && self.max_locality_violation.is_none_or(|v| v <= tol)
    }
}

/// Evaluates `H^t(p+z) - 2H^t(p) + H^t(p-z)` on each sample and compares it with
/// the upper bound `|z|^2/t`, the lower bound `theta|z|^2/(1+t theta)` and the
/// local bound through `Q(R,t) = 2(R + t max_{|w|<=R} |DH(w)|)` with `R = |p|`.
pub fn check_envelope_properties(
    h0: &ConstraintFunction,
    t: f64,
    samples: &[EnvelopeSample],
) -> Result<EnvelopeReport, ConvexError> {
    let env = ConstraintFunction::moreau_envelope(h0.clone(), t)?;
    let theta = Some(h0.curvature_lower_bound()).filter(|th| *th > 0.0);
    let mut report = EnvelopeReport {
        t,
        theta,
        second_differences: Vec::with_capacity(samples.len()),
        max_upper_violation: f64::NEG_INFINITY,
        max_lower_violation: theta.map(|_| f64::NEG_INFINITY),
        max_locality_violation: theta.map(|_| f64::NEG_INFINITY),
    };
    for s in samples {
        let p = env.check(&s.p)?;
        let z = env.check(&s.z)?;
        let delta = env.eval(p + z)? - 2.0 * env.eval(p)? + env.eval(p - z)?;
        let z2 = z.norm_squared();
        report.second_differences.push(delta);
        report.max_upper_violation = report.max_upper_violation.max(delta - z2 / t);
        if let Some(th) = theta {
            let lower = th * z2 / (1.0 + t * th);
            report.max_lower_violation = report.max_lower_violation.map(|v| v.max(lower - delta));
            let r = p.norm();
            let q = 2.0 * (r + t * max_over_ball(h0, r, |w| Ok(h0.grad(w)?.norm()))?);
            let curv = max_over_ball(h0, q + z.norm(), |w| {
                Ok(h0.hess(w)?.map_or(f64::INFINITY, |m| m.symmetric_eigenvalues().abs().max()))
            })?;
            report.max_locality_violation = report.max_locality_violation.map(|v| v.max(delta - curv * z2));
        }
    }
    if samples.is_empty() {
        report.max_upper_violation = 0.0;
        report.max_lower_violation = theta.map(|_| 0.0);
        report.max_locality_violation = theta.map(|_| 0.0);
    }
    Ok(report)
}

/// Maximum of `f` over a uniform grid of the closed ball `B_r`.
fn max_over_ball<F>(h: &ConstraintFunction, r: f64, f: F) -> Result<f64, ConvexError>
where
    F: Fn(Vec2) -> Result<f64, ConvexError>,
{
    let n = if h.dim == 1 { 201 } else { 41 };
    let mut best = f(Vec2::zeros())?;
    for i in 0..n {
        let x = -r + 2.0 * r * i as f64 / (n - 1) as f64;
        if h.dim == 1 {
            best = best.max(f(Vec2::new(x, 0.0))?);
            continue;
        }
        for j in 0..n {
            let y = -r + 2.0 * r * j as f64 / (n - 1) as f64;
            if x * x + y * y <= r * r {
                best = best.max(f(Vec2::new(x, y))?);
            }
        }
    }
    Ok(best)
}
