//! Monte Carlo estimate of the discounted singular-control cost in 1D,
//!
//! `E^x int_0^tau e^{-int_0^t c(X)} [f(X) dt + l(rho) dxi]`,
//! `dX = -b dt + sigma dW - rho dxi`, `a = sigma^2 / 2`,
//!
//! under a policy read off a solved free boundary: no control inside the
//! policy region, and a singular push at each of its endpoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{ConvexBody, ConvexError};
use crate::diagnostics::{Activity, FreeBoundaryMask};
use crate::expr::{ExprError, Expression};
use crate::operator::{EllipticProblem, GridFunction};

/// Discount level below which the remaining cost is dropped.
const DISCOUNT_CUTOFF: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum McError {
    #[error("Monte Carlo needs a 1-dimensional problem, got dimension {0}")]
    Dimension(usize),
    #[error("x0 = {x0} lies outside the policy region [{lo}, {hi}]")]
    OutsideRegion { x0: f64, lo: f64, hi: f64 },
    #[error("policy region [{lo}, {hi}] is not inside the domain [{dlo}, {dhi}]")]
    RegionOutsideDomain { lo: f64, hi: f64, dlo: f64, dhi: f64 },
    #[error("need at least 100 paths, got {0}")]
    TooFewPaths(usize),
    #[error("time step must be positive, got {0}")]
    TimeStep(f64),
    #[error("free boundary required: {0}")]
    FreeBoundary(String),
    #[error("coefficient `{name}`: {source}")]
    Expr {
        name: &'static str,
        #[source]
        source: ExprError,
    },
    #[error(transparent)]
    Convex(#[from] ConvexError),
}

/// A coefficient with its constant value folded in when it has no variables.
#[derive(Debug, Clone)]
enum Coef {
    Const(f64),
    Expr(Expression, &'static str),
}

impl Coef {
    fn new(e: &Expression, name: &'static str) -> Self {
        match e.constant_value() {
            Some(v) => Coef::Const(v),
            None => Coef::Expr(e.clone(), name),
        }
    }

    #[inline]
    fn at(&self, x: f64) -> Result<f64, McError> {
        match self {
            Coef::Const(v) => Ok(*v),
            Coef::Expr(e, name) => e.eval(&[x]).map_err(|source| McError::Expr { name, source }),
        }
    }
}

/// `sigma(x) = sqrt(2 a(x))`.
#[derive(Debug, Clone)]
pub struct Volatility {
    a: Coef,
}

impl Volatility {
    pub fn at(&self, x: f64) -> Result<f64, McError> {
        Ok((2.0 * self.a.at(x)?).sqrt())
    }
}

pub fn sigma_from_a(problem: &EllipticProblem) -> Result<Volatility, McError> {
    if problem.dim() != 1 {
        return Err(McError::Dimension(problem.dim()));
    }
    Ok(Volatility { a: Coef::new(problem.diffusion(0), "a") })
}

/// `l(direction)` for `direction = +1` or `-1`.
pub fn support_cost(k: &ConvexBody, direction: f64) -> Result<f64, McError> {
    Ok(k.support_value(&[direction])?)
}

/// What the policy does when the state crosses a region endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointAction {
    /// Push back to the endpoint.
    Reflect,
    /// Push through to the domain boundary, ending the path.
    PushToExit,
}

/// Interval `[lo, hi]` of the domain where no control is exerted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyRegion {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "exit_action")]
    pub lo_action: EndpointAction,
    #[serde(default = "exit_action")]
    pub hi_action: EndpointAction,
}

fn exit_action() -> EndpointAction {
    EndpointAction::PushToExit
}

impl PolicyRegion {
    pub fn new(lo: f64, hi: f64, lo_action: EndpointAction, hi_action: EndpointAction) -> Self {
        Self { lo, hi, lo_action, hi_action }
    }

    /// Hull of the points of the mask that are not `constraint_active`. At each endpoint facing a
    /// constraint band, the push goes in the direction in which `u` decreases
    /// across the band: outwards (to exit) or back into the region.
    pub fn from_free_boundary(mask: &FreeBoundaryMask, u: &GridFunction) -> Result<Self, McError> {
        let g = mask.grid();
        if g.dim() != 1 {
            return Err(McError::Dimension(g.dim()));
        }
        let flags = mask.flags();
        // `both_near` points straddle the interface on the PDE side.
        let active: Vec<usize> = (0..flags.len()).filter(|k| flags[*k] != Activity::ConstraintActive).collect();
        let (Some(&first), Some(&last)) = (active.first(), active.last()) else {
            return Err(McError::FreeBoundary("mask has no pde_active points".into()));
        };
        if last - first + 1 != active.len() {
            log::warn!("unconstrained set is not an interval; using its hull");
        }
        let n = flags.len();
        let v = u.values();
        let x = |k: usize| g.point(g.unknown_index(k))[0];
        // Storage index of unknown k is k + 1; boundary layer at 0 and n + 1.
        let (lo, lo_action) = if first == 0 {
            (g.lo()[0], EndpointAction::PushToExit)
        } else {
            // u falling towards the domain edge across the band means exiting is cheaper.
            let outward_drop = v[first + 1] - v[1];
            (x(first), if outward_drop > 0.0 { EndpointAction::PushToExit } else { EndpointAction::Reflect })
        };
        let (hi, hi_action) = if last == n - 1 {
            (g.hi()[0], EndpointAction::PushToExit)
        } else {
            let outward_drop = v[last + 1] - v[n];
            (x(last), if outward_drop > 0.0 { EndpointAction::PushToExit } else { EndpointAction::Reflect })
        };
        Ok(Self { lo, hi, lo_action, hi_action })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub x0: f64,
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Recorded trajectory of one path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControlledPath {
    pub dt: f64,
    pub x: Vec<f64>,
    /// Cumulative control `xi(t)`.
    pub xi: Vec<f64>,
    /// Direction of each nonzero control increment, 0 when idle.
    pub rho_ctl: Vec<f64>,
    /// `int_0^t c(X) ds`.
    pub discount_integral: Vec<f64>,
    pub running_cost: Vec<f64>,
    pub total_cost: f64,
    pub exited: bool,
}

impl ControlledPath {
    /// `xi(0) = 0`, `xi` non-decreasing, and `|rho_ctl| = 1` whenever `xi` moves.
    pub fn invariants_hold(&self) -> bool {
        self.xi.first() == Some(&0.0)
            && self.xi.windows(2).all(|w| w[1] >= w[0])
            && self.xi.windows(2).zip(&self.rho_ctl[1..]).all(|(w, r)| w[1] == w[0] || r.abs() == 1.0)
    }
}

/// Coefficients and policy prepared for fast stepping.
struct Model {
    b: Coef,
    a: Coef,
    c: Coef,
    f: Coef,
    dom: (f64, f64),
    region: PolicyRegion,
    /// `l(+1)` (push to the left) and `l(-1)` (push to the right).
    cost_left: f64,
    cost_right: f64,
    dt: f64,
}

impl Model {
    fn new(problem: &EllipticProblem, region: &PolicyRegion, k: &ConvexBody, dt: f64) -> Result<Self, McError> {
        if problem.dim() != 1 {
            return Err(McError::Dimension(problem.dim()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(McError::TimeStep(dt));
        }
        let dom = (problem.lo()[0], problem.hi()[0]);
        if !(region.lo >= dom.0 && region.hi <= dom.1 && region.lo < region.hi) {
            return Err(McError::RegionOutsideDomain { lo: region.lo, hi: region.hi, dlo: dom.0, dhi: dom.1 });
        }
        Ok(Self {
            b: Coef::new(problem.drift(0), "b"),
            a: Coef::new(problem.diffusion(0), "a"),
            c: Coef::new(problem.reaction(), "c"),
            f: Coef::new(problem.source(), "f"),
            dom,
            region: *region,
            cost_left: support_cost(k, 1.0)?,
            cost_right: support_cost(k, -1.0)?,
            dt,
        })
    }

    /// One path from `x0`; returns its discounted cost.
    fn run(&self, x0: f64, rng: &mut ChaCha8Rng, mut rec: Option<&mut ControlledPath>) -> Result<f64, McError> {
        let dt = self.dt;
        let sdt = dt.sqrt();
        let (dlo, dhi) = self.dom;
        let r = &self.region;
        let mut x = x0;
        let mut disc = 1.0f64;
        let mut disc_int = 0.0;
        let mut cost = 0.0;
        let mut running = 0.0;
        let mut xi = 0.0;
        if let Some(p) = rec.as_deref_mut() {
            *p = ControlledPath { dt, ..Default::default() };
            p.x.push(x);
            p.xi.push(0.0);
            p.rho_ctl.push(0.0);
            p.discount_integral.push(0.0);
            p.running_cost.push(0.0);
        }
        let mut exited = false;
        while disc >= DISCOUNT_CUTOFF {
            let fx = self.f.at(x)?;
            let cx = self.c.at(x)?;
            let sigma = (2.0 * self.a.at(x)?).sqrt();
            let bx = self.b.at(x)?;
            running += disc * fx * dt;
            disc_int += cx * dt;
            disc *= (-cx * dt).exp();
            let z: f64 = StandardNormal.sample(rng);
            x += -bx * dt + sigma * sdt * z;

            let mut dxi = 0.0;
            let mut rho = 0.0;
            if x <= dlo || x >= dhi {
                exited = true;
            } else if x > r.hi {
                match r.hi_action {
                    EndpointAction::Reflect => {
                        dxi = x - r.hi;
                        rho = 1.0;
                        cost += disc * self.cost_left * dxi;
                        x = r.hi;
                    }
                    EndpointAction::PushToExit => {
                        dxi = dhi - x;
                        rho = -1.0;
                        cost += disc * self.cost_right * dxi;
                        x = dhi;
                        exited = true;
                    }
                }
            } else if x < r.lo {
                match r.lo_action {
                    EndpointAction::Reflect => {
                        dxi = r.lo - x;
                        rho = -1.0;
                        cost += disc * self.cost_right * dxi;
                        x = r.lo;
                    }
                    EndpointAction::PushToExit => {
                        dxi = x - dlo;
                        rho = 1.0;
                        cost += disc * self.cost_left * dxi;
                        x = dlo;
                        exited = true;
                    }
                }
            }
            xi += dxi;
            if let Some(p) = rec.as_deref_mut() {
                p.x.push(x);
                p.xi.push(xi);
                p.rho_ctl.push(rho);
                p.discount_integral.push(disc_int);
                p.running_cost.push(running);
            }
            if exited {
                break;
            }
        }
        let total = running + cost;
        if let Some(p) = rec {
            p.total_cost = total;
            p.exited = exited;
        }
        Ok(total)
    }
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn check_start(region: &PolicyRegion, x0: f64) -> Result<(), McError> {
    if !(x0 >= region.lo && x0 <= region.hi) {
        return Err(McError::OutsideRegion { x0, lo: region.lo, hi: region.hi });
    }
    Ok(())
}

/// Mean discounted cost over `n_paths` paths from `x0`. Path `i` draws from the
/// ChaCha8 stream `i` of `seed`, so the result does not depend on thread count.
pub fn estimate_value(
    problem: &EllipticProblem,
    region: &PolicyRegion,
    k: &ConvexBody,
    x0: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<McEstimate, McError> {
    if n_paths < 100 {
        return Err(McError::TooFewPaths(n_paths));
    }
    let model = Model::new(problem, region, k, dt)?;
    check_start(region, x0)?;
    let smax = [region.lo, x0, region.hi]
        .iter()
        .map(|x| model.a.at(*x).map(|a| (2.0 * a).sqrt()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    if region.width() < 2.0 * smax * dt.sqrt() {
        log::warn!(
            "time step {dt} is coarse for a policy region of width {}: one step moves about {}",
            region.width(),
            smax * dt.sqrt()
        );
    }
    let costs: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| model.run(x0, &mut path_rng(seed, i), None))
        .collect::<Result<_, _>>()?;
    let n = n_paths as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0);
    Ok(McEstimate { x0, mean, std_error: (var / n).sqrt(), n_paths, dt, seed })
}

/// Simulates and records path `path` of the estimator's stream family.
pub fn simulate_path(
    problem: &EllipticProblem,
    region: &PolicyRegion,
    k: &ConvexBody,
    x0: f64,
    dt: f64,
    seed: u64,
    path: u64,
) -> Result<ControlledPath, McError> {
    let model = Model::new(problem, region, k, dt)?;
    check_start(region, x0)?;
    let mut rec = ControlledPath::default();
    model.run(x0, &mut path_rng(seed, path), Some(&mut rec))?;
    Ok(rec)
}
