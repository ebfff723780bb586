//! Convex gradient-constraint functions `H` and their regularizations.
//!
//! Besides the catalog entries (`w|p| - r`, `p.Mp - r2`, support-derived
//! constraints of a body `K`) this module builds the smoothing ladder used to
//! reduce a merely convex `H` to a smooth, uniformly convex one:
//!
//! 1. inf-convolution `H^t(p) = inf_q { H(q) + |p - q|^2 / (2t) }`,
//! 2. mollification `H^{t,rho} = eta_rho * H^t`,
//! 3. convexification `H^{t,rho,theta}(p) = theta |p|^2 + H^{t,rho}(p)`.
//!
//! Gradients are 1- or 2-vectors; in one dimension the second component is
//! carried as zero.

mod body;
mod envelope;
mod quadrature;

use std::sync::Arc;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use body::{BodySpec, ConvexBody};
pub use envelope::{check_envelope_properties, EnvelopeReport, EnvelopeSample};
pub use quadrature::{gauss_legendre, MollifierRule, MOLLIFIER_NODES};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvexError {
    #[error("expected a vector of dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid constraint parameter: {0}")]
    Invalid(String),
    #[error("direction must have unit length, got |v| = {norm}")]
    NotUnit { norm: f64 },
    #[error("inner proximal solve did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("regularization destroyed negativity at origin: H(0) = {value}")]
    OriginNotNegative { value: f64 },
}

impl ConvexError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::Invalid(msg.into())
    }
}

pub(crate) fn to_vec2(p: &[f64]) -> Vec2 {
    Vector2::new(p.first().copied().unwrap_or(0.0), p.get(1).copied().unwrap_or(0.0))
}

/// A convex function `H` on R^1 or R^2 with `H(0) < 0`.
#[derive(Debug, Clone)]
pub struct ConstraintFunction {
    dim: usize,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    NormMinusConstant { weight: f64, radius: f64 },
    QuadraticForm { matrix: Mat2, level: f64 },
    SupportDerived(ConvexBody),
    Affine { slope: Vec2, offset: f64 },
    MoreauEnvelope { base: Box<ConstraintFunction>, t: f64 },
    Mollified { base: Box<ConstraintFunction>, rho: f64, rule: Arc<MollifierRule> },
    Convexified { base: Box<ConstraintFunction>, theta: f64 },
}

/// JSON form of a constraint, e.g. `{"kind": "norm", "r": 1.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ConstraintSpec {
    Norm {
        r: f64,
        #[serde(default = "unit_weight")]
        w: f64,
    },
    Quadratic {
        #[serde(rename = "M")]
        m: Vec<Vec<f64>>,
        r2: f64,
    },
    Support {
        body: BodySpec,
    },
    Regularized {
        base: Box<ConstraintSpec>,
        t: f64,
        rho: f64,
        theta: f64,
    },
}

fn unit_weight() -> f64 {
    1.0
}

fn check_dim(dim: usize) -> Result<(), ConvexError> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(ConvexError::invalid(format!("dimension must be 1 or 2, got {dim}")))
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConvexError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConvexError::invalid(format!("{name} must be positive, got {v}")))
    }
}

impl ConstraintFunction {
    /// `w |p| - r`.
    pub fn norm_minus_constant(dim: usize, weight: f64, radius: f64) -> Result<Self, ConvexError> {
        check_dim(dim)?;
        positive("norm weight", weight)?;
        positive("radius", radius)?;
        Ok(Self { dim, kind: Kind::NormMinusConstant { weight, radius } })
    }

    /// `p . M p - r2` for symmetric positive definite `M` (1x1 or 2x2).
    pub fn quadratic(matrix: &[Vec<f64>], level: f64) -> Result<Self, ConvexError> {
        let dim = matrix.len();
        check_dim(dim)?;
        if matrix.iter().any(|row| row.len() != dim) {
            return Err(ConvexError::invalid("quadratic form matrix must be square"));
        }
        positive("quadratic level r2", level)?;
        let mut m = Mat2::zeros();
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = matrix[i][j];
            }
        }
        if (m[(0, 1)] - m[(1, 0)]).abs() > 1e-12 * (1.0 + m.abs().max()) {
            return Err(ConvexError::invalid("quadratic form matrix must be symmetric"));
        }
        let q = Self { dim, kind: Kind::QuadraticForm { matrix: m, level } };
        if !(q.curvature_lower_bound() > 0.0) {
            return Err(ConvexError::invalid("quadratic form matrix must be positive definite"));
        }
        Ok(q)
    }

    /// `H(p) = max_{|v|=1} { p.v - l(v) }` with `l` the support function of `body`.
    pub fn support(body: ConvexBody) -> Self {
        Self { dim: body.dim(), kind: Kind::SupportDerived(body) }
    }

    /// `q -> d.q + e` with `e < 0`; mostly useful as a stand-in base in tests.
    pub fn affine(slope: &[f64], offset: f64) -> Result<Self, ConvexError> {
        let dim = slope.len();
        check_dim(dim)?;
        if !(offset < 0.0) {
            return Err(ConvexError::OriginNotNegative { value: offset });
        }
        Ok(Self { dim, kind: Kind::Affine { slope: to_vec2(slope), offset } })
    }

    /// Inf-convolution of `base` with `|.|^2 / (2t)`.
    pub fn moreau_envelope(base: ConstraintFunction, t: f64) -> Result<Self, ConvexError> {
        positive("envelope parameter t", t)?;
        Ok(Self { dim: base.dim, kind: Kind::MoreauEnvelope { base: Box::new(base), t } })
    }

    /// Convolution of `base` with the bump `eta_rho`. Rejects the result if it
    /// is no longer negative at the origin.
    pub fn mollified(base: ConstraintFunction, rho: f64) -> Result<Self, ConvexError> {
        positive("mollification radius rho", rho)?;
        let rule = Arc::new(MollifierRule::new(base.dim));
        let out = Self { dim: base.dim, kind: Kind::Mollified { base: Box::new(base), rho, rule } };
        let at_origin = out.eval(Vec2::zeros())?;
        if !(at_origin < 0.0) {
            return Err(ConvexError::OriginNotNegative { value: at_origin });
        }
        Ok(out)
    }

    /// `theta |p|^2 + base(p)`.
    pub fn convexified(base: ConstraintFunction, theta: f64) -> Result<Self, ConvexError> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(ConvexError::invalid(format!("theta must lie in (0, 1), got {theta}")));
        }
        Ok(Self { dim: base.dim, kind: Kind::Convexified { base: Box::new(base), theta } })
    }

    /// Envelope, then mollify, then add `theta |p|^2`. The order is fixed.
    pub fn build_regularized(h0: ConstraintFunction, t: f64, rho: f64, theta: f64) -> Result<Self, ConvexError> {
        for (name, v) in [("t", t), ("rho", rho), ("theta", theta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ConvexError::invalid(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        let env = Self::moreau_envelope(h0, t)?;
        let moll = Self::mollified(env, rho)?;
        Self::convexified(moll, theta)
    }

    pub fn from_spec(spec: &ConstraintSpec, dim: usize) -> Result<Self, ConvexError> {
        check_dim(dim)?;
        let h = match spec {
            ConstraintSpec::Norm { r, w } => Self::norm_minus_constant(dim, *w, *r)?,
            ConstraintSpec::Quadratic { m, r2 } => Self::quadratic(m, *r2)?,
            ConstraintSpec::Support { body } => Self::support(ConvexBody::from_spec(body, dim)?),
            ConstraintSpec::Regularized { base, t, rho, theta } => {
                Self::build_regularized(Self::from_spec(base, dim)?, *t, *rho, *theta)?
            }
        };
        if h.dim != dim {
            return Err(ConvexError::Dimension { expected: dim, got: h.dim });
        }
        Ok(h)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            Kind::NormMinusConstant { .. } => "norm_minus_constant",
            Kind::QuadraticForm { .. } => "quadratic_form",
            Kind::SupportDerived(_) => "support_derived",
            Kind::Affine { .. } => "affine",
            Kind::MoreauEnvelope { .. } => "moreau_envelope",
            Kind::Mollified { .. } => "mollified",
            Kind::Convexified { .. } => "convexified",
        }
    }

    /// The convexification weight `theta` when this is the top of a regularization ladder.
    pub fn convexification_weight(&self) -> Option<f64> {
        match self.kind {
            Kind::Convexified { theta, .. } => Some(theta),
            _ => None,
        }
    }

    fn check(&self, p: &[f64]) -> Result<Vec2, ConvexError> {
        if p.len() != self.dim {
            return Err(ConvexError::Dimension { expected: self.dim, got: p.len() });
        }
        Ok(to_vec2(p))
    }

    fn out(&self, v: Vec2) -> Vec<f64> {
        v.as_slice()[..self.dim].to_vec()
    }

    pub fn value(&self, p: &[f64]) -> Result<f64, ConvexError> {
        self.eval(self.check(p)?)
    }

    /// An element of the subdifferential; at kinks the minimal-norm element.
    pub fn subgradient(&self, p: &[f64]) -> Result<Vec<f64>, ConvexError> {
        Ok(self.out(self.grad(self.check(p)?)?))
    }

    /// Hessian where it exists (`None` at kinks of nonsmooth kinds).
    pub fn hessian(&self, p: &[f64]) -> Result<Option<Vec<Vec<f64>>>, ConvexError> {
        let h = self.hess(self.check(p)?)?;
        Ok(h.map(|m| (0..self.dim).map(|i| (0..self.dim).map(|j| m[(i, j)]).collect()).collect()))
    }

    /// A lower bound `theta >= 0` with `D^2 H >= theta` everywhere.
    pub fn curvature_lower_bound(&self) -> f64 {
        match &self.kind {
            Kind::QuadraticForm { matrix, .. } => {
                if self.dim == 1 {
                    2.0 * matrix[(0, 0)]
                } else {
                    2.0 * SymmetricEigen::new(*matrix).eigenvalues.min()
                }
            }
            Kind::MoreauEnvelope { base, t } => {
                let th = base.curvature_lower_bound();
                th / (1.0 + t * th)
            }
            Kind::Mollified { base, .. } => base.curvature_lower_bound(),
            Kind::Convexified { base, theta } => 2.0 * theta + base.curvature_lower_bound(),
            Kind::NormMinusConstant { .. } | Kind::SupportDerived(_) | Kind::Affine { .. } => 0.0,
        }
    }

    pub(crate) fn eval(&self, p: Vec2) -> Result<f64, ConvexError> {
        Ok(match &self.kind {
            Kind::NormMinusConstant { weight, radius } => weight * p.norm() - radius,
            Kind::QuadraticForm { matrix, level } => p.dot(&(matrix * p)) - level,
            Kind::SupportDerived(body) => body.derived_constraint(p).0,
            Kind::Affine { slope, offset } => slope.dot(&p) + offset,
            Kind::MoreauEnvelope { base, t } => {
                let q = envelope::prox(base, p, *t)?;
                base.eval(q)? + (p - q).norm_squared() / (2.0 * t)
            }
            Kind::Mollified { base, rho, rule } => {
                let mut acc = 0.0;
                for (s, w) in rule.offsets.iter().zip(&rule.weights) {
                    acc += w * base.eval(p - s * *rho)?;
                }
                acc
            }
            Kind::Convexified { base, theta } => theta * p.norm_squared() + base.eval(p)?,
        })
    }

    pub(crate) fn grad(&self, p: Vec2) -> Result<Vec2, ConvexError> {
        Ok(match &self.kind {
            Kind::NormMinusConstant { weight, .. } => {
                let n = p.norm();
                if n == 0.0 {
                    Vec2::zeros()
                } else {
                    p * (*weight / n)
                }
            }
            Kind::QuadraticForm { matrix, .. } => matrix * p * 2.0,
            Kind::SupportDerived(body) => body::min_norm_in_hull(&body.derived_constraint(p).1),
            Kind::Affine { slope, .. } => *slope,
            Kind::MoreauEnvelope { base, t } => {
                let q = envelope::prox(base, p, *t)?;
                (p - q) / *t
            }
            Kind::Mollified { base, rho, rule } => {
                let mut acc = Vec2::zeros();
                for (s, w) in rule.offsets.iter().zip(&rule.weights) {
                    acc += base.grad(p - s * *rho)? * *w;
                }
                acc
            }
            Kind::Convexified { base, theta } => p * (2.0 * theta) + base.grad(p)?,
        })
    }

    pub(crate) fn eval_grad(&self, p: Vec2) -> Result<(f64, Vec2), ConvexError> {
        match &self.kind {
            Kind::MoreauEnvelope { base, t } => {
                let q = envelope::prox(base, p, *t)?;
                Ok((base.eval(q)? + (p - q).norm_squared() / (2.0 * t), (p - q) / *t))
            }
            Kind::Mollified { base, rho, rule } => {
                let mut v = 0.0;
                let mut g = Vec2::zeros();
                for (s, w) in rule.offsets.iter().zip(&rule.weights) {
                    let (bv, bg) = base.eval_grad(p - s * *rho)?;
                    v += w * bv;
                    g += bg * *w;
                }
                Ok((v, g))
            }
            Kind::Convexified { base, theta } => {
                let (bv, bg) = base.eval_grad(p)?;
                Ok((theta * p.norm_squared() + bv, p * (2.0 * theta) + bg))
            }
            _ => Ok((self.eval(p)?, self.grad(p)?)),
        }
    }

    pub(crate) fn hess(&self, p: Vec2) -> Result<Option<Mat2>, ConvexError> {
        let mask = |m: Mat2| {
            if self.dim == 1 {
                let mut out = Mat2::zeros();
                out[(0, 0)] = m[(0, 0)];
                out
            } else {
                m
            }
        };
        Ok(match &self.kind {
            Kind::QuadraticForm { matrix, .. } => Some(matrix * 2.0),
            Kind::Affine { .. } => Some(Mat2::zeros()),
            Kind::NormMinusConstant { weight, .. } => norm_hessian(p, *weight).map(mask),
            Kind::SupportDerived(ConvexBody::Ball { .. }) => norm_hessian(p, 1.0).map(mask),
            Kind::SupportDerived(ConvexBody::Interval { lo, hi }) => {
                if p.x == 0.5 * (lo + hi) {
                    None
                } else {
                    Some(Mat2::zeros())
                }
            }
            Kind::SupportDerived(ConvexBody::Polytope { .. }) => None,
            Kind::MoreauEnvelope { .. } | Kind::Mollified { .. } => Some(mask(self.fd_hessian(p)?)),
            Kind::Convexified { base, theta } => {
                let inner = match base.hess(p)? {
                    Some(h) => h,
                    None => return Ok(None),
                };
                Some(mask(inner + Mat2::identity() * (2.0 * theta)))
            }
        })
    }

    /// Central differences of the gradient, for kinds whose gradient is Lipschitz.
    fn fd_hessian(&self, p: Vec2) -> Result<Mat2, ConvexError> {
        let step = 1e-5 * (1.0 + p.norm());
        let mut m = Mat2::zeros();
        for j in 0..self.dim {
            let mut e = Vec2::zeros();
            e[j] = step;
            let col = (self.grad(p + e)? - self.grad(p - e)?) / (2.0 * step);
            for i in 0..self.dim {
                m[(i, j)] = col[i];
            }
        }
        Ok((m + m.transpose()) * 0.5)
    }
}

fn norm_hessian(p: Vec2, weight: f64) -> Option<Mat2> {
    let n = p.norm();
    if n == 0.0 {
        return None;
    }
    let u = p / n;
    Some((Mat2::identity() - u * u.transpose()) * (weight / n))
}

#[cfg(test)]
mod tests;
