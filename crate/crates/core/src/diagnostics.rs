//! Executable checks on solver output: sandwich bounds, complementarity,
//! free-boundary extraction, regularity statistics, data monotonicity and
//! refinement studies.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::convex::{ConstraintFunction, ConvexError};
use crate::operator::{gradient, second_difference, DiscreteOperator, EllipticProblem, Grid, GridFunction, OperatorError};
use crate::solver::{continuation, solve_linear, ContinuationSchedule, SolverError};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("pair `{label}` is not ordered: {detail}")]
    Unordered { label: String, detail: String },
    #[error("ordering violated for `{label}`: u1 - u2 reaches {violation:e}")]
    OrderingViolated { label: String, violation: f64 },
    #[error("grid {coarse:?} is not nested in the reference grid {fine:?}")]
    NotNested { coarse: Vec<usize>, fine: Vec<usize> },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ConvexError> for DiagnosticsError {
    fn from(e: ConvexError) -> Self {
        Self::Solver(e.into())
    }
}

/// Activity band used by the free-boundary mask: `10 (eps + h)`.
pub fn default_activity_tol(eps: f64, h: f64) -> f64 {
    10.0 * (eps + h)
}

/// `max f(k)` over unknowns at distance at least `margin` from the boundary (0 if none).
pub fn interior_sup(grid: &Grid, margin: f64, f: impl Fn(usize) -> f64) -> f64 {
    let tol = 1e-12 * (1.0 + margin);
    (0..grid.unknowns())
        .filter(|k| grid.distance_to_boundary(grid.unknown_index(*k)) >= margin - tol)
        .map(f)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    pub passed: bool,
    /// `max(-u, u - u_bar)` over the grid, clipped at 0.
    pub max_violation: f64,
    /// Largest `u_bar - u`; positive when the constraint pushed the solution down.
    pub max_gap: f64,
}

/// Checks `-tol <= u <= u_bar + tol` pointwise.
pub fn sandwich_check(u: &GridFunction, u_bar: &GridFunction, tol: f64) -> SandwichReport {
    let mut viol = 0.0f64;
    let mut gap = 0.0f64;
    for (a, b) in u.values().iter().zip(u_bar.values()) {
        viol = viol.max(-a).max(a - b);
        gap = gap.max(b - a);
    }
    SandwichReport { passed: viol <= tol, max_violation: viol.max(0.0), max_gap: gap }
}

/// Pointwise branches `r_L = L_h u - f` and `r_H = H(D_h u)` at the unknowns.
pub fn branches(
    op: &DiscreteOperator,
    u: &GridFunction,
    h: &ConstraintFunction,
) -> Result<(Vec<f64>, Vec<f64>), ConvexError> {
    let lu = op.apply_interior(&u.interior());
    let rl: Vec<f64> = lu.iter().zip(op.source()).map(|(a, f)| a - f).collect();
    let rh = gradient(u).into_iter().map(|p| h.eval(p)).collect::<Result<Vec<_>, _>>()?;
    Ok((rl, rh))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplementarityStats {
    /// `max |max{r_L, r_H}|`.
    pub residual: f64,
    /// `max H(D_h u)`.
    pub max_h: f64,
    /// `max (L_h u - f)`.
    pub max_pde: f64,
    /// `max min{f - L_h u, -H(D_h u)}`; small when one branch is active everywhere.
    pub max_min_slack: f64,
}

pub fn complementarity(
    op: &DiscreteOperator,
    u: &GridFunction,
    h: &ConstraintFunction,
) -> Result<ComplementarityStats, ConvexError> {
    let (rl, rh) = branches(op, u, h)?;
    let mut s = ComplementarityStats {
        residual: 0.0,
        max_h: f64::NEG_INFINITY,
        max_pde: f64::NEG_INFINITY,
        max_min_slack: f64::NEG_INFINITY,
    };
    for (l, hh) in rl.iter().zip(&rh) {
        s.residual = s.residual.max(l.max(*hh).abs());
        s.max_h = s.max_h.max(*hh);
        s.max_pde = s.max_pde.max(*l);
        s.max_min_slack = s.max_min_slack.max((-l).min(-hh));
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    ConstraintActive,
    PdeActive,
    BothNear,
}

impl Activity {
    pub fn as_str(self) -> &'static str {
        match self {
            Activity::ConstraintActive => "constraint_active",
            Activity::PdeActive => "pde_active",
            Activity::BothNear => "both_near",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constraint_active" => Some(Activity::ConstraintActive),
            "pde_active" => Some(Activity::PdeActive),
            "both_near" => Some(Activity::BothNear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MaskCounts {
    pub pde_active: usize,
    pub constraint_active: usize,
    pub both_near: usize,
    pub free_boundary: usize,
}

/// Per-unknown branch activity.
#[derive(Debug, Clone)]
pub struct FreeBoundaryMask {
    grid: Grid,
    flags: Vec<Activity>,
    tol: f64,
}

/// Flags each interior point: `both_near` when both branches are within `tol` of
/// zero, otherwise the branch closer to zero.
pub fn free_boundary(
    op: &DiscreteOperator,
    u: &GridFunction,
    h: &ConstraintFunction,
    tol: f64,
) -> Result<FreeBoundaryMask, ConvexError> {
    let (rl, rh) = branches(op, u, h)?;
    let flags = rl
        .iter()
        .zip(&rh)
        .map(|(l, hh)| {
            if l.abs() <= tol && hh.abs() <= tol {
                Activity::BothNear
            } else if hh.abs() < l.abs() {
                Activity::ConstraintActive
            } else {
                Activity::PdeActive
            }
        })
        .collect();
    Ok(FreeBoundaryMask { grid: op.grid().clone(), flags, tol })
}

impl FreeBoundaryMask {
    pub fn from_flags(grid: &Grid, flags: Vec<Activity>, tol: f64) -> Result<Self, DiagnosticsError> {
        if flags.len() != grid.unknowns() {
            return Err(OperatorError::Shape(format!("{} flags for {} unknowns", flags.len(), grid.unknowns())).into());
        }
        Ok(Self { grid: grid.clone(), flags, tol })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn flags(&self) -> &[Activity] {
        &self.flags
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    /// Unknowns of the other class among the axis neighbors.
    fn borders(&self, k: usize) -> bool {
        let me = self.flags[k];
        if me == Activity::BothNear {
            return true;
        }
        let idx = self.grid.unknown_index(k);
        (0..self.grid.dim()).any(|axis| {
            let s = self.grid.stride(axis);
            [idx - s, idx + s].iter().any(|nb| {
                self.grid.unknown_of(*nb).is_some_and(|j| {
                    let other = self.flags[j];
                    other != me && other != Activity::BothNear
                })
            })
        })
    }

    /// `both_near` points and points adjacent to the other class.
    pub fn free_boundary_points(&self) -> Vec<Vec<f64>> {
        (0..self.flags.len())
            .filter(|k| self.borders(*k))
            .map(|k| self.grid.point(self.grid.unknown_index(k)))
            .collect()
    }

    pub fn counts(&self) -> MaskCounts {
        let mut c = MaskCounts::default();
        for f in &self.flags {
            match f {
                Activity::PdeActive => c.pde_active += 1,
                Activity::ConstraintActive => c.constraint_active += 1,
                Activity::BothNear => c.both_near += 1,
            }
        }
        c.free_boundary = (0..self.flags.len()).filter(|k| self.borders(*k)).count();
        c
    }

    /// Point list `x1[,x2]` of the approximate free boundary.
    pub fn write_free_boundary_csv<W: Write>(&self, out: W) -> Result<(), DiagnosticsError> {
        let mut w = csv::Writer::from_writer(out);
        let header: &[&str] = if self.grid.dim() == 1 { &["x1"] } else { &["x1", "x2"] };
        w.write_record(header).map_err(csv_err)?;
        for p in self.free_boundary_points() {
            w.write_record(p.iter().map(|x| format!("{x:.16e}"))).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Every interior point with its flag: `x1[,x2],flag`.
    pub fn write_mask_csv<W: Write>(&self, out: W) -> Result<(), DiagnosticsError> {
        let mut w = csv::Writer::from_writer(out);
        let header: &[&str] = if self.grid.dim() == 1 { &["x1", "flag"] } else { &["x1", "x2", "flag"] };
        w.write_record(header).map_err(csv_err)?;
        for (k, f) in self.flags.iter().enumerate() {
            let mut rec: Vec<String> =
                self.grid.point(self.grid.unknown_index(k)).iter().map(|x| format!("{x:.16e}")).collect();
            rec.push(f.as_str().to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads flags written by [`write_mask_csv`](Self::write_mask_csv) for `grid`.
    pub fn read_mask_csv<R: std::io::Read>(grid: &Grid, input: R, tol: f64) -> Result<Self, DiagnosticsError> {
        let mut r = csv::Reader::from_reader(input);
        let mut flags = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let last = rec.get(rec.len().saturating_sub(1)).unwrap_or("");
            let flag = Activity::parse(last.trim())
                .ok_or_else(|| OperatorError::Csv(format!("unknown activity flag `{last}`")))?;
            flags.push(flag);
        }
        Self::from_flags(grid, flags, tol)
    }

    /// Number of points whose flag differs from that of their mirror image under
    /// some symmetry of the box, with no point of the same flag within one cell of
    /// the image. `both_near` matches anything.
    pub fn symmetry_defect(&self) -> usize {
        let g = &self.grid;
        let shape = g.shape();
        let flag_at = |i1: usize, i2: usize| -> Option<Activity> {
            g.unknown_of(g.index(i1, i2)).map(|k| self.flags[k])
        };
        let mut maps: Vec<Box<dyn Fn(usize, usize) -> (usize, usize)>> = Vec::new();
        let n1 = shape[0];
        maps.push(Box::new(move |i, j| (n1 + 1 - i, j)));
        if g.dim() == 2 {
            let n2 = shape[1];
            maps.push(Box::new(move |i, j| (i, n2 + 1 - j)));
            if n1 == n2 {
                maps.push(Box::new(|i, j| (j, i)));
            }
        }
        let compatible = |a: Activity, b: Activity| a == b || a == Activity::BothNear || b == Activity::BothNear;
        let mut defects = 0;
        for k in 0..self.flags.len() {
            let idx = g.unknown_index(k);
            let (i1, i2) = g.multi(idx);
            let me = self.flags[k];
            for m in &maps {
                let (j1, j2) = m(i1, i2);
                if flag_at(j1, j2).is_some_and(|f| compatible(me, f)) {
                    continue;
                }
                let near = |d1: isize, d2: isize| {
                    let a = j1 as isize + d1;
                    let b = j2 as isize + d2;
                    a >= 0 && b >= 0 && flag_at(a as usize, b as usize).is_some_and(|f| compatible(me, f))
                };
                let d2s: &[isize] = if g.dim() == 2 { &[-1, 0, 1] } else { &[0] };
                let found = [-1isize, 0, 1].iter().any(|d1| d2s.iter().any(|d2| near(*d1, *d2)));
                if !found {
                    defects += 1;
                }
            }
        }
        defects
    }
}

fn csv_err(e: csv::Error) -> DiagnosticsError {
    OperatorError::Csv(e.to_string()).into()
}

/// One solution entering a regularity scan.
#[derive(Debug, Clone)]
pub struct RegularityEntry {
    pub eps: f64,
    pub u: GridFunction,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityRow {
    pub eps: f64,
    pub h: f64,
    pub sup_grad: f64,
    pub sup_second_diff: f64,
    /// Slope of `log max|Du(x) - Du(y)|` against `log|x - y|`.
    pub holder_slope: f64,
    pub holder_r2: f64,
    pub scales: usize,
    pub min_pairs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsVariation {
    pub h: f64,
    /// `(max - min)/max` of the interior second-difference sup across eps.
    pub relative_spread: f64,
    /// Whether the sup grows as eps decreases (allowed for merely convex H).
    pub growing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub interior_margin: f64,
    pub sup_grad: f64,
    pub sup_second_diff: f64,
    /// Slope of the finest, smallest-eps entry clamped to `(0, 1]`.
    pub holder_alpha_estimate: f64,
    pub holder_r2: f64,
    pub rows: Vec<RegularityRow>,
    pub eps_variation: Vec<EpsVariation>,
}

/// Largest gradient jump per dyadic scale and the log-log fit through them.
/// Returns `(slope, r2, scales, min_pairs)`.
pub fn holder_fit(u: &GridFunction, margin: f64) -> (f64, f64, usize, usize) {
    let g = u.grid();
    let grads = gradient(u);
    let inside = |idx: usize| g.distance_to_boundary(idx) >= margin - 1e-12;
    let mut pts = Vec::new();
    let mut min_pairs = usize::MAX;
    for axis in 0..g.dim() {
        let h = g.h(axis);
        let width = g.hi()[axis] - g.lo()[axis] - 2.0 * margin;
        let mut cells = 1usize;
        while (cells as f64) * h <= 0.25 * width {
            let s = cells * g.stride(axis);
            let mut best = 0.0f64;
            let mut pairs = 0;
            for k in 0..g.unknowns() {
                let x = g.unknown_index(k);
                let y = x + s;
                if y >= g.len() || !inside(x) || g.is_boundary(y) || !inside(y) || g.multi(y).1 < g.multi(x).1 {
                    continue;
                }
                if let Some(j) = g.unknown_of(y) {
                    pairs += 1;
                    best = best.max((grads[k] - grads[j]).norm());
                }
            }
            if pairs < 10 {
                break;
            }
            min_pairs = min_pairs.min(pairs);
            if best > 0.0 {
                pts.push(((cells as f64 * h).ln(), best.ln()));
            }
            cells *= 2;
        }
    }
    if min_pairs == usize::MAX {
        min_pairs = 0;
    }
    let scales = pts.len();
    if scales < 2 {
        // Gradient constant on every scale: Lipschitz.
        return (1.0, 1.0, scales, min_pairs);
    }
    let (slope, r2) = least_squares(&pts);
    (slope, r2, scales, min_pairs)
}

/// Slope and coefficient of determination of the least-squares line.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, r2)
}

/// Interior sup of `|D_h u|` and of the second differences at distance `margin`
/// from the boundary, with a Hoelder fit of the gradient, for each entry.
pub fn regularity_scan(entries: &[RegularityEntry], margin: Option<f64>) -> Result<RegularityReport, DiagnosticsError> {
    let mut eps: Vec<f64> = entries.iter().map(|e| e.eps).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    let hs_of = |e: &RegularityEntry| e.u.grid().spacing().iter().copied().fold(0.0, f64::max);
    let mut hs: Vec<f64> = entries.iter().map(hs_of).collect();
    hs.sort_by(f64::total_cmp);
    hs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    if eps.len() < 3 || hs.len() < 2 {
        return Err(DiagnosticsError::Insufficient(format!(
            "need at least 3 eps values and 2 grid spacings, got {} and {}",
            eps.len(),
            hs.len()
        )));
    }
    let margin = margin.unwrap_or(5.0 * hs[hs.len() - 1]);
    if !(margin > 0.0) {
        return Err(DiagnosticsError::Insufficient("interior margin must be positive".into()));
    }
    let mut rows = Vec::new();
    for e in entries {
        let g = e.u.grid();
        let grads = gradient(&e.u);
        let sup_grad = interior_sup(g, margin, |k| grads[k].norm());
        let second: Vec<Vec<f64>> = (0..g.dim()).map(|a| second_difference(&e.u, a)).collect();
        let sup_second_diff = interior_sup(g, margin, |k| second.iter().map(|s| s[k].abs()).fold(0.0, f64::max));
        let (holder_slope, holder_r2, scales, min_pairs) = holder_fit(&e.u, margin);
        rows.push(RegularityRow {
            eps: e.eps,
            h: hs_of(e),
            sup_grad,
            sup_second_diff,
            holder_slope,
            holder_r2,
            scales,
            min_pairs,
        });
    }
    let mut eps_variation = Vec::new();
    for h in &hs {
        let mut at: Vec<&RegularityRow> = rows.iter().filter(|r| (r.h - h).abs() <= 1e-12 * h).collect();
        if at.len() < 2 {
            continue;
        }
        at.sort_by(|a, b| b.eps.total_cmp(&a.eps));
        let vals: Vec<f64> = at.iter().map(|r| r.sup_second_diff).collect();
        let max = vals.iter().copied().fold(0.0, f64::max);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let growing = vals.windows(2).all(|w| w[1] >= w[0]) && vals.last() > vals.first();
        eps_variation.push(EpsVariation { h: *h, relative_spread: if max > 0.0 { (max - min) / max } else { 0.0 }, growing });
    }
    let best = rows
        .iter()
        .min_by(|a, b| a.h.total_cmp(&b.h).then(a.eps.total_cmp(&b.eps)))
        .expect("entries are non-empty");
    Ok(RegularityReport {
        interior_margin: margin,
        sup_grad: rows.iter().map(|r| r.sup_grad).fold(0.0, f64::max),
        sup_second_diff: rows.iter().map(|r| r.sup_second_diff).fold(0.0, f64::max),
        holder_alpha_estimate: best.holder_slope.clamp(f64::MIN_POSITIVE, 1.0),
        holder_r2: best.holder_r2,
        eps_variation,
        rows,
    })
}

/// Two problems whose data are ordered: `f_lower <= f_upper`, `g_lower <= g_upper`.
#[derive(Debug, Clone)]
pub struct OrderedPair {
    pub label: String,
    pub lower: EllipticProblem,
    pub upper: EllipticProblem,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairOutcome {
    pub label: String,
    /// `max(u_lower - u_upper)`.
    pub max_violation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub tolerance: f64,
    pub pairs: Vec<PairOutcome>,
}

/// Solves both members of each pair and checks `u_lower <= u_upper + 1e-8`.
/// Any violation is returned as an error, after all pairs have been solved.
pub fn comparison_test(
    pairs: &[OrderedPair],
    h: &ConstraintFunction,
    schedule: &ContinuationSchedule,
    shape: &[usize],
) -> Result<ComparisonReport, DiagnosticsError> {
    let tol = 1e-8;
    let mut out = Vec::new();
    for pair in pairs {
        let lo = pair.lower.assemble(shape)?;
        let hi = pair.upper.assemble(shape)?;
        let df = lo.source().iter().zip(hi.source()).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
        let dg = lo
            .boundary_values()
            .iter()
            .zip(hi.boundary_values())
            .enumerate()
            .filter(|(i, _)| lo.grid().is_boundary(*i))
            .map(|(_, (a, b))| a - b)
            .fold(f64::NEG_INFINITY, f64::max);
        if df > 0.0 || dg > 0.0 {
            return Err(DiagnosticsError::Unordered {
                label: pair.label.clone(),
                detail: format!("max(f1 - f2) = {df}, max(g1 - g2) = {dg}"),
            });
        }
        let u1 = crate::solver::solve_constrained_with(&lo, h, schedule)?.u;
        let u2 = crate::solver::solve_constrained_with(&hi, h, schedule)?.u;
        let v = u1.values().iter().zip(u2.values()).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
        out.push(PairOutcome { label: pair.label.clone(), max_violation: v.max(0.0), passed: v <= tol });
    }
    if let Some(bad) = out.iter().find(|p| !p.passed) {
        return Err(DiagnosticsError::OrderingViolated { label: bad.label.clone(), violation: bad.max_violation });
    }
    Ok(ComparisonReport { tolerance: tol, pairs: out })
}

/// What errors are measured against in a refinement study.
#[derive(Clone, Copy)]
pub enum Reference<'a> {
    /// Known exact solution.
    Analytic(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
    /// Finest grid at the smallest eps.
    Finest,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    /// `"h"` for the grid sweep at the smallest eps, `"eps"` for the eps sweep on the finest grid.
    pub sweep: &'static str,
    pub h: f64,
    pub eps: f64,
    pub value_error: f64,
    pub grad_error: f64,
    /// `max |u^eps - u^eps_prev|` for eps rows.
    pub successive_diff: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub h_value_slope: Option<f64>,
    pub h_grad_slope: Option<f64>,
    pub eps_value_slope: Option<f64>,
    pub eps_diffs_shrink: bool,
}

impl RateTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DiagnosticsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sweep", "h", "eps", "value_error", "grad_error", "successive_diff"]).map_err(csv_err)?;
        let f = |v: f64| format!("{v:.16e}");
        let o = |v: Option<f64>| v.map(f).unwrap_or_default();
        for r in &self.rows {
            w.write_record([r.sweep.to_string(), f(r.h), f(r.eps), f(r.value_error), f(r.grad_error), o(r.successive_diff)])
                .map_err(csv_err)?;
        }
        w.write_record(["fit_h".into(), String::new(), String::new(), o(self.h_value_slope), o(self.h_grad_slope), String::new()])
            .map_err(csv_err)?;
        w.write_record(["fit_eps".into(), String::new(), String::new(), o(self.eps_value_slope), String::new(), String::new()])
            .map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }
}

fn fit_slope(pts: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> =
        pts.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    if logs.len() < 2 || logs.len() < pts.len() {
        return None;
    }
    Some(least_squares(&logs).0)
}

/// Value and gradient errors of `u` against the reference sampled on `u`'s grid.
fn errors_against(u: &GridFunction, reference: &GridFunction) -> (f64, f64) {
    let gu = gradient(u);
    let gr = gradient(reference);
    let grad = gu.iter().zip(&gr).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    (u.max_abs_diff(reference), grad)
}

/// Restriction of a fine-grid function to a nested coarse grid.
fn restrict(fine: &GridFunction, coarse: &Grid) -> Result<GridFunction, DiagnosticsError> {
    let fg = fine.grid();
    let mut vals = Vec::with_capacity(coarse.len());
    for i in 0..coarse.len() {
        let p = coarse.point(i);
        let mut idx = [0usize; 2];
        for k in 0..coarse.dim() {
            let s = (p[k] - fg.lo()[k]) / fg.h(k);
            if (s - s.round()).abs() > 1e-6 {
                return Err(DiagnosticsError::NotNested { coarse: coarse.shape(), fine: fg.shape() });
            }
            idx[k] = s.round() as usize;
        }
        vals.push(fine.values()[fg.index(idx[0], idx[1])]);
    }
    Ok(GridFunction::new(coarse, vals)?)
}

/// Grid sweep over `shapes` at the smallest of `eps_levels`, and eps sweep over
/// `eps_levels` on the finest shape. Each solve continues along `schedule`'s
/// ladder with the study levels merged in.
pub fn convergence_study(
    problem: &EllipticProblem,
    h: &ConstraintFunction,
    schedule: &ContinuationSchedule,
    shapes: &[Vec<usize>],
    eps_levels: &[f64],
    reference: Reference<'_>,
) -> Result<RateTable, DiagnosticsError> {
    if shapes.len() < 3 || eps_levels.len() < 3 {
        return Err(DiagnosticsError::Insufficient(format!(
            "need at least 3 grid levels and 3 eps levels, got {} and {}",
            shapes.len(),
            eps_levels.len()
        )));
    }
    let mut levels = eps_levels.to_vec();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let eps_min = *levels.last().unwrap();
    let mut ladder: Vec<f64> = schedule.eps_list.iter().copied().filter(|e| *e > eps_min).collect();
    ladder.extend(&levels);
    ladder.sort_by(|a, b| b.total_cmp(a));
    ladder.dedup();
    let sched = ContinuationSchedule::new(ladder, schedule.newton)?;

    let mut order: Vec<usize> = (0..shapes.len()).collect();
    let unknowns = |s: &Vec<usize>| s.iter().product::<usize>();
    order.sort_by_key(|i| unknowns(&shapes[*i]));
    let finest = *order.last().unwrap();

    // Solve every grid; keep the eps snapshots of the finest one.
    let mut finals: Vec<GridFunction> = Vec::new();
    let mut snapshots: Vec<(f64, GridFunction)> = Vec::new();
    for (i, shape) in shapes.iter().enumerate() {
        let op = problem.assemble(shape)?;
        let start = solve_linear(&op)?;
        let (u, _) = continuation(&op, h, &sched, &start, |rec, u| {
            if i == finest && levels.iter().any(|e| *e == rec.eps) {
                snapshots.push((rec.eps, u.clone()));
            }
        })?;
        finals.push(u);
    }
    let reference_on = |grid: &Grid| -> Result<GridFunction, DiagnosticsError> {
        match reference {
            Reference::Analytic(f) => Ok(GridFunction::from_fn(grid, f)),
            Reference::Finest => restrict(&finals[finest], grid),
        }
    };
    let hmax = |g: &Grid| g.spacing().iter().copied().fold(0.0, f64::max);

    let mut rows = Vec::new();
    let mut hpts = Vec::new();
    let mut gpts = Vec::new();
    for &i in &order {
        if matches!(reference, Reference::Finest) && i == finest {
            continue;
        }
        let g = finals[i].grid();
        let (ve, ge) = errors_against(&finals[i], &reference_on(g)?);
        rows.push(RateRow { sweep: "h", h: hmax(g), eps: eps_min, value_error: ve, grad_error: ge, successive_diff: None });
        hpts.push((hmax(g), ve));
        gpts.push((hmax(g), ge));
    }
    let fine_grid = finals[finest].grid().clone();
    let fine_ref = reference_on(&fine_grid)?;
    let mut epts = Vec::new();
    let mut diffs = Vec::new();
    let mut prev: Option<&GridFunction> = None;
    for (eps, u) in &snapshots {
        let (ve, ge) = errors_against(u, &fine_ref);
        let d = prev.map(|p| p.max_abs_diff(u));
        if let Some(d) = d {
            diffs.push(d);
        }
        rows.push(RateRow { sweep: "eps", h: hmax(&fine_grid), eps: *eps, value_error: ve, grad_error: ge, successive_diff: d });
        if !(matches!(reference, Reference::Finest) && *eps == eps_min) {
            epts.push((*eps, ve));
        }
        prev = Some(u);
    }
    Ok(RateTable {
        rows,
        h_value_slope: fit_slope(&hpts),
        h_grad_slope: fit_slope(&gpts),
        eps_value_slope: fit_slope(&epts),
        eps_diffs_shrink: diffs.windows(2).all(|w| w[1] <= w[0]),
    })
}
