//! Damped semismooth Newton for `L_h u + beta_eps(H(D_h u)) = f` with
//! warm-started eps-continuation, and the linear solve `L_h u = f`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{ConstraintFunction, ConvexError};
use crate::diagnostics::{self, ComplementarityStats, FreeBoundaryMask};
use crate::linalg::{solve_banded, LinalgError};
use crate::operator::{gradient, second_difference, DiscreteOperator, EllipticProblem, GridFunction, OperatorError};
use crate::penalty::{PenaltyError, PenaltyFamily};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error("linear solve failed: {0}")]
    Linalg(#[from] LinalgError),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("constraint has dimension {got}, problem has dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("constraint must be negative at the origin, H(0) = {0}")]
    OriginNotNegative(f64),
    #[error("Newton stagnated at eps = {eps} after {iterations} iterations: residual {residual:e} above target {target:e}")]
    Stagnation { eps: f64, iterations: usize, residual: f64, target: f64 },
    #[error("Newton hit the iteration cap at eps = {eps}: residual {residual:e} above target {target:e} after {iterations} iterations")]
    MaxIterations { eps: f64, iterations: usize, residual: f64, target: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Target for the residual sup-norm. Zero demands an exact solve and always fails.
    pub abs_tol: f64,
    pub armijo: f64,
    pub min_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { max_iter: 100, abs_tol: 1e-10, armijo: 1e-4, min_step: 2f64.powi(-20) }
    }
}

/// Decreasing penalty parameters plus the Newton settings used at each of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationSchedule {
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
    #[serde(default)]
    pub newton: NewtonOptions,
}

fn default_eps_list() -> Vec<f64> {
    (0..=10).map(|k| 0.5 * 2f64.powi(-k)).collect()
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        Self { eps_list: default_eps_list(), newton: NewtonOptions::default() }
    }
}

impl ContinuationSchedule {
    pub fn new(eps_list: Vec<f64>, newton: NewtonOptions) -> Result<Self, SolverError> {
        let s = Self { eps_list, newton };
        s.validate()?;
        Ok(s)
    }

    /// Halving ladder from 0.5 down to, and ending exactly at, `eps_final`.
    pub fn ending_at(eps_final: f64) -> Result<Self, SolverError> {
        let mut eps_list: Vec<f64> = Vec::new();
        let mut e = 0.5;
        while e > eps_final * 1.5 {
            eps_list.push(e);
            e *= 0.5;
        }
        eps_list.push(eps_final);
        Self::new(eps_list, NewtonOptions::default())
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::Schedule(m));
        if self.eps_list.is_empty() {
            return bad("eps_list is empty".into());
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad(format!("eps values must be positive, got {:?}", self.eps_list));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("eps values must be strictly decreasing, got {:?}", self.eps_list));
        }
        let n = &self.newton;
        if n.max_iter == 0 || !(n.abs_tol >= 0.0) || !(n.armijo > 0.0 && n.armijo < 1.0) {
            return bad("newton needs max_iter > 0, abs_tol >= 0 and armijo in (0, 1)".into());
        }
        if !(n.min_step > 0.0 && n.min_step <= 1.0) {
            return bad(format!("min_step must lie in (0, 1], got {}", n.min_step));
        }
        Ok(())
    }

    pub fn eps_final(&self) -> f64 {
        *self.eps_list.last().unwrap()
    }
}

/// Solves `L_h u = f` with `u = g` on the boundary.
pub fn solve_unconstrained(problem: &EllipticProblem, shape: &[usize]) -> Result<GridFunction, SolverError> {
    let op = problem.assemble(shape)?;
    solve_linear(&op)
}

pub fn solve_linear(op: &DiscreteOperator) -> Result<GridFunction, SolverError> {
    let rhs: Vec<f64> = op.source().iter().zip(op.boundary_contribution()).map(|(f, b)| f - b).collect();
    let u = solve_banded(op.matrix().clone(), &rhs)?;
    Ok(op.extend(&u))
}

/// Residual of the penalized system and the pieces needed for its Jacobian.
struct Evaluation {
    residual: Vec<f64>,
    norm: f64,
    beta: Vec<f64>,
    dbeta: Vec<f64>,
    hgrad: Vec<crate::convex::Vec2>,
    /// Rounding level of the residual at this iterate.
    floor: f64,
}

fn evaluate(
    op: &DiscreteOperator,
    h: &ConstraintFunction,
    fam: &PenaltyFamily,
    u: &[f64],
) -> Result<Evaluation, SolverError> {
    let grads = gradient(&op.extend(u));
    let au = op.matrix().matvec(u);
    let scale = op.matrix().abs_matvec(u);
    let n = u.len();
    let mut ev = Evaluation {
        residual: vec![0.0; n],
        norm: 0.0,
        beta: vec![0.0; n],
        dbeta: vec![0.0; n],
        hgrad: Vec::with_capacity(n),
        floor: 0.0,
    };
    let (bc, f) = (op.boundary_contribution(), op.source());
    let mut size = 0.0f64;
    for i in 0..n {
        let (hv, hg) = h.eval_grad(grads[i])?;
        let b = fam.beta(hv);
        ev.beta[i] = b;
        ev.dbeta[i] = fam.beta_prime(hv);
        ev.hgrad.push(hg);
        let r = au[i] + bc[i] + b - f[i];
        ev.residual[i] = r;
        ev.norm = ev.norm.max(r.abs());
        size = size.max(scale[i] + bc[i].abs() + f[i].abs() + b);
    }
    ev.floor = 32.0 * f64::EPSILON * size;
    Ok(ev)
}

/// Counters of one Newton solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonStats {
    pub iterations: usize,
    pub residual: f64,
    /// The residual level accepted as converged (see [`NewtonOptions::abs_tol`]).
    pub target: f64,
}

fn newton(
    op: &DiscreteOperator,
    h: &ConstraintFunction,
    fam: &PenaltyFamily,
    mut u: Vec<f64>,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, NewtonStats), SolverError> {
    let grid = op.grid();
    let eps = fam.epsilon();
    let mut ev = evaluate(op, h, fam, &u)?;
    let target_of = |ev: &Evaluation| if opts.abs_tol > 0.0 { opts.abs_tol.max(ev.floor) } else { 0.0 };
    for it in 0..=opts.max_iter {
        let target = target_of(&ev);
        if ev.norm <= target {
            return Ok((u, NewtonStats { iterations: it, residual: ev.norm, target }));
        }
        if it == opts.max_iter {
            return Err(SolverError::MaxIterations { eps, iterations: it, residual: ev.norm, target });
        }
        // Generalized Jacobian: A_h + beta' dH . D_h.
        let mut jac = op.matrix().clone();
        for row in 0..u.len() {
            let idx = grid.unknown_index(row);
            for axis in 0..grid.dim() {
                let coef = ev.dbeta[row] * ev.hgrad[row][axis] / (2.0 * grid.h(axis));
                if coef == 0.0 {
                    continue;
                }
                let s = grid.stride(axis);
                if let Some(col) = grid.unknown_of(idx + s) {
                    jac.add(row, col, coef);
                }
                if let Some(col) = grid.unknown_of(idx - s) {
                    jac.add(row, col, -coef);
                }
            }
        }
        let rhs: Vec<f64> = ev.residual.iter().map(|r| -r).collect();
        let delta = solve_banded(jac, &rhs)?;
        let mut step = 1.0;
        let mut accepted = None;
        while step >= opts.min_step {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
            let tev = evaluate(op, h, fam, &trial)?;
            if tev.norm <= (1.0 - opts.armijo * step) * ev.norm {
                accepted = Some((trial, tev));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, tev)) => {
                u = trial;
                ev = tev;
            }
            None => {
                return Err(SolverError::Stagnation { eps, iterations: it + 1, residual: ev.norm, target });
            }
        }
    }
    unreachable!("loop returns on its last iteration")
}

fn check_constraint(op: &DiscreteOperator, h: &ConstraintFunction) -> Result<(), SolverError> {
    if h.dim() != op.grid().dim() {
        return Err(SolverError::Dimension { expected: op.grid().dim(), got: h.dim() });
    }
    let h0 = h.value(&vec![0.0; h.dim()])?;
    if !(h0 < 0.0) {
        return Err(SolverError::OriginNotNegative(h0));
    }
    Ok(())
}

/// Solves the penalized system at one `eps`, by default starting from the
/// solution of `L_h u = f`.
pub fn solve_penalized(
    op: &DiscreteOperator,
    h: &ConstraintFunction,
    fam: &PenaltyFamily,
    initial_guess: Option<&GridFunction>,
    opts: &NewtonOptions,
) -> Result<(GridFunction, NewtonStats), SolverError> {
    check_constraint(op, h)?;
    let u0 = match initial_guess {
        Some(g) if g.grid() == op.grid() => g.interior(),
        Some(_) => return Err(OperatorError::Shape("initial guess lives on a different grid".into()).into()),
        None => solve_linear(op)?.interior(),
    };
    let (u, stats) = newton(op, h, fam, u0, opts)?;
    Ok((op.extend(&u), stats))
}

/// Tracked quantities after one continuation stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub eps: f64,
    /// Stage run with `eps >= theta` for a convexified constraint; not counted in bound trends.
    pub warmup: bool,
    pub iterations: usize,
    pub residual: f64,
    pub target: f64,
    /// `max beta_eps(H(D_h u))` over the interior.
    pub max_beta: f64,
    /// `max |D_h u|` over the interior.
    pub grad_inf: f64,
    /// `max |second difference|` over points at least `margin` from the boundary.
    pub second_diff_inf: f64,
}

/// Result of a full continuation run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u: GridFunction,
    pub u_bar: GridFunction,
    pub history: Vec<StageRecord>,
    pub mask: FreeBoundaryMask,
    pub complementarity_residual: f64,
    pub complementarity: ComplementarityStats,
    /// `theta` of a convexified constraint, which caps the admissible `eps`.
    pub theta: Option<f64>,
    pub margin: f64,
}

impl SolveReport {
    pub fn eps_final(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |s| s.eps)
    }

    /// Stages whose bounds count towards trends.
    pub fn tracked(&self) -> impl Iterator<Item = &StageRecord> {
        self.history.iter().filter(|s| !s.warmup)
    }

    /// `sup beta` over tracked stages, a finite stand-in for the uniform penalty bound.
    pub fn sup_beta(&self) -> f64 {
        self.tracked().map(|s| s.max_beta).fold(0.0, f64::max)
    }

    pub fn summary(&self) -> ReportSummary {
        let g = self.u.grid();
        ReportSummary {
            dim: g.dim(),
            shape: g.shape(),
            spacing: g.spacing(),
            lo: g.lo(),
            hi: g.hi(),
            eps_final: self.eps_final(),
            theta: self.theta,
            margin: self.margin,
            history: self.history.clone(),
            sup_beta: self.sup_beta(),
            complementarity_residual: self.complementarity_residual,
            complementarity: self.complementarity.clone(),
            mask_tolerance: self.mask.tolerance(),
            mask_counts: self.mask.counts(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("report serializes")
    }
}

/// JSON metadata of a [`SolveReport`]; grids go to CSV separately.
#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub dim: usize,
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub eps_final: f64,
    pub theta: Option<f64>,
    pub margin: f64,
    pub history: Vec<StageRecord>,
    pub sup_beta: f64,
    pub complementarity_residual: f64,
    pub complementarity: ComplementarityStats,
    pub mask_tolerance: f64,
    pub mask_counts: diagnostics::MaskCounts,
}

/// Effective ladder: stages at `eps >= theta` are warmups, and `theta/2` is
/// appended when no stage gets below `theta`.
fn coupled_eps(schedule: &ContinuationSchedule, theta: Option<f64>) -> Vec<(f64, bool)> {
    let mut out: Vec<(f64, bool)> =
        schedule.eps_list.iter().map(|e| (*e, theta.is_some_and(|th| *e >= th))).collect();
    if let Some(th) = theta {
        if out.iter().all(|s| s.1) {
            out.push((0.5 * th, false));
        }
    }
    out
}

/// Runs [`solve_penalized`] along the schedule, calling `on_stage` after each stage.
pub fn continuation<F>(
    op: &DiscreteOperator,
    h: &ConstraintFunction,
    schedule: &ContinuationSchedule,
    start: &GridFunction,
    mut on_stage: F,
) -> Result<(GridFunction, Vec<StageRecord>), SolverError>
where
    F: FnMut(&StageRecord, &GridFunction),
{
    schedule.validate()?;
    check_constraint(op, h)?;
    let grid = op.grid().clone();
    let margin = default_margin(&grid);
    let mut u = start.clone();
    let mut history = Vec::new();
    for (eps, warmup) in coupled_eps(schedule, h.convexification_weight()) {
        let fam = PenaltyFamily::new(eps)?;
        let (next, stats) = solve_penalized(op, h, &fam, Some(&u), &schedule.newton)?;
        u = next;
        let grads = gradient(&u);
        let mut max_beta = 0.0f64;
        for p in &grads {
            max_beta = max_beta.max(fam.beta(h.eval(*p)?));
        }
        let grad_inf = grads.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let second = (0..grid.dim()).map(|k| second_difference(&u, k)).collect::<Vec<_>>();
        let second_diff_inf = diagnostics::interior_sup(&grid, margin, |k| {
            second.iter().map(|s| s[k].abs()).fold(0.0, f64::max)
        });
        let rec = StageRecord {
            eps,
            warmup,
            iterations: stats.iterations,
            residual: stats.residual,
            target: stats.target,
            max_beta,
            grad_inf,
            second_diff_inf,
        };
        on_stage(&rec, &u);
        log::debug!("eps = {eps:e}: {} Newton iterations, residual {:e}", stats.iterations, stats.residual);
        history.push(rec);
    }
    Ok((u, history))
}

/// Interior margin used for second-difference statistics: five cells.
pub fn default_margin(grid: &crate::operator::Grid) -> f64 {
    5.0 * grid.spacing().iter().copied().fold(0.0, f64::max)
}

/// Full pipeline: linear solve, continuation from it, then complementarity
/// statistics and the free-boundary mask at the final `eps`.
pub fn solve_constrained(
    problem: &EllipticProblem,
    h: &ConstraintFunction,
    schedule: &ContinuationSchedule,
    shape: &[usize],
) -> Result<SolveReport, SolverError> {
    let op = problem.assemble(shape)?;
    solve_constrained_with(&op, h, schedule)
}

pub fn solve_constrained_with(
    op: &DiscreteOperator,
    h: &ConstraintFunction,
    schedule: &ContinuationSchedule,
) -> Result<SolveReport, SolverError> {
    schedule.validate()?;
    check_constraint(op, h)?;
    let u_bar = solve_linear(op)?;
    let (u, history) = continuation(op, h, schedule, &u_bar, |_, _| {})?;
    let eps = history.last().map_or(schedule.eps_final(), |s| s.eps);
    let hmax = op.grid().spacing().iter().copied().fold(0.0, f64::max);
    let mask = diagnostics::free_boundary(op, &u, h, diagnostics::default_activity_tol(eps, hmax))?;
    let complementarity = diagnostics::complementarity(op, &u, h)?;
    Ok(SolveReport {
        complementarity_residual: complementarity.residual,
        complementarity,
        mask,
        margin: default_margin(op.grid()),
        theta: h.convexification_weight(),
        u,
        u_bar,
        history,
    })
}
