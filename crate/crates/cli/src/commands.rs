use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use gradhjb::convex::{
    check_envelope_properties, ConstraintFunction, ConstraintSpec, ConvexBody, EnvelopeSample,
};
use gradhjb::diagnostics::{self, comparison_test, convergence_study, DiagnosticsError, OrderedPair, Reference};
use gradhjb::expr::Expression;
use gradhjb::mc::{estimate_value, McEstimate, PolicyRegion};
use gradhjb::operator::EllipticProblem;
use gradhjb::penalty::{check_invariants, Bridge, PenaltyFamily};
use gradhjb::solver::{solve_constrained_with, SolveReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn io_err(name: &str) -> impl Fn(String) -> CliError + '_ {
    move |e| CliError::Config(format!("writing {name}: {e}"))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(name)(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(name)(e.to_string()))
}

fn run_solve(cfg: &RunConfig, problem: &EllipticProblem) -> Result<SolveReport, CliError> {
    let h = cfg.constraint()?;
    let op = problem.assemble(&cfg.shape).map_err(|e| CliError::Config(e.to_string()))?;
    solve_constrained_with(&op, &h, &cfg.schedule).map_err(|e| CliError::Solver(e.to_string()))
}

pub fn solve(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let problem = cfg.problem()?;
    let report = run_solve(cfg, &problem)?;
    report.u.write_csv(create(out, "solution.csv")?).map_err(|e| io_err("solution.csv")(e.to_string()))?;
    let mut w = create(out, "report.json")?;
    writeln!(w, "{}", report.to_json()).and_then(|_| w.flush()).map_err(|e| io_err("report.json")(e.to_string()))?;
    report
        .mask
        .write_free_boundary_csv(create(out, "free_boundary.csv")?)
        .map_err(|e| io_err("free_boundary.csv")(e.to_string()))?;
    report.mask.write_mask_csv(create(out, "mask.csv")?).map_err(|e| io_err("mask.csv")(e.to_string()))?;
    let counts = report.mask.counts();
    Ok(format!(
        "solved: eps_final = {:e}, complementarity residual = {:.3e}, free-boundary points = {}",
        report.eps_final(),
        report.complementarity_residual,
        counts.free_boundary
    ))
}

#[derive(Debug, Serialize)]
struct Check {
    name: String,
    passed: bool,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<String>,
}

#[derive(Debug, Serialize)]
struct VerifyOutput {
    passed: bool,
    checks: Vec<Check>,
}

fn check(name: impl Into<String>, passed: bool, value: f64) -> Check {
    Check { name: name.into(), passed, value, detail: None }
}

fn failed(name: &str, detail: String) -> Check {
    Check { name: name.into(), passed: false, value: f64::NAN, detail: Some(detail) }
}

/// Unregularized base of the configured constraint.
fn envelope_base(spec: &ConstraintSpec, dim: usize) -> Result<ConstraintFunction, CliError> {
    let base = match spec {
        ConstraintSpec::Regularized { base, .. } => base.as_ref(),
        s => s,
    };
    ConstraintFunction::from_spec(base, dim).map_err(|e| CliError::Config(e.to_string()))
}

fn envelope_checks(cfg: &RunConfig, dim: usize) -> Result<Vec<Check>, CliError> {
    let spec = cfg.constraint.as_ref().ok_or_else(|| CliError::Config("missing \"constraint\"".into()))?;
    let h0 = envelope_base(spec, dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.verify.seed);
    let tol = 1e-8;
    let (mut origin, mut upper, mut lower, mut local) = (f64::NEG_INFINITY, f64::NEG_INFINITY, None, None);
    let per_t = 10;
    for _ in 0..cfg.verify.envelope_samples.div_ceil(per_t) {
        let t = rng.random_range(0.05..1.0);
        let samples: Vec<EnvelopeSample> = (0..per_t)
            .map(|_| EnvelopeSample {
                p: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
                z: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let env = ConstraintFunction::moreau_envelope(h0.clone(), t).map_err(|e| CliError::Config(e.to_string()))?;
        origin = origin.max(env.value(&vec![0.0; dim]).map_err(|e| CliError::Solver(e.to_string()))?);
        let r = check_envelope_properties(&h0, t, &samples).map_err(|e| CliError::Solver(e.to_string()))?;
        upper = upper.max(r.max_upper_violation);
        lower = r.max_lower_violation.map(|v| lower.map_or(v, |l: f64| l.max(v)));
        local = r.max_locality_violation.map(|v| local.map_or(v, |l: f64| l.max(v)));
    }
    let mut out = vec![
        check("envelope_origin_negative", origin < 0.0, origin),
        check("envelope_upper_second_difference", upper <= tol, upper),
    ];
    if let Some(v) = lower {
        out.push(check("envelope_lower_second_difference", v <= tol, v));
    }
    if let Some(v) = local {
        out.push(check("envelope_local_bound", v <= tol, v));
    }
    Ok(out)
}

fn shifted(e: &Expression, by: f64) -> Result<Expression, CliError> {
    Expression::parse(&format!("({}) + {by}", e.source())).map_err(|e| CliError::Config(e.to_string()))
}

pub fn verify(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let problem = cfg.problem()?;
    let v = &cfg.verify;
    let mut checks = Vec::new();

    if v.penalty {
        let bridge = match v.inject_fault.as_deref() {
            None => Bridge::Quadratic,
            Some("concave_penalty") => Bridge::ConcaveFault,
            Some(other) => return Err(CliError::Config(format!("unknown fault `{other}`"))),
        };
        for eps in [0.5, 0.1, 0.01] {
            let fam = PenaltyFamily::with_bridge(eps, bridge).map_err(|e| CliError::Config(e.to_string()))?;
            for c in check_invariants(&fam, 10_000, 1e-9) {
                checks.push(check(format!("penalty_{}_eps_{eps}", c.name), c.passed, c.max_violation));
            }
        }
    }
    if v.envelope {
        checks.extend(envelope_checks(cfg, problem.dim())?);
    }
    if v.sandwich || v.complementarity {
        let report = run_solve(cfg, &problem)?;
        if v.sandwich {
            let s = diagnostics::sandwich_check(&report.u, &report.u_bar, 1e-8);
            checks.push(check("sandwich", s.passed, s.max_violation));
        }
        if v.complementarity {
            let r = report.complementarity_residual;
            checks.push(check("complementarity", r <= v.complementarity_tol, r));
        }
    }
    if v.comparison {
        let h = cfg.constraint()?;
        let pairs = vec![
            OrderedPair {
                label: "f <= f + 1".into(),
                lower: problem.clone(),
                upper: problem.with_source(shifted(problem.source(), 1.0)?),
            },
            OrderedPair {
                label: "g <= g + 0.1".into(),
                lower: problem.clone(),
                upper: problem.with_boundary(shifted(problem.boundary(), 0.1)?),
            },
        ];
        match comparison_test(&pairs, &h, &cfg.schedule, &cfg.shape) {
            Ok(r) => {
                for p in r.pairs {
                    checks.push(check(format!("comparison {}", p.label), p.passed, p.max_violation));
                }
            }
            Err(e @ DiagnosticsError::OrderingViolated { .. }) => checks.push(failed("comparison", e.to_string())),
            Err(DiagnosticsError::Solver(e)) => return Err(CliError::Solver(e.to_string())),
            Err(e) => return Err(CliError::Config(e.to_string())),
        }
    }

    let passed = checks.iter().all(|c| c.passed);
    let n_failed = checks.iter().filter(|c| !c.passed).count();
    let names: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    write_json(out, "verify.json", &VerifyOutput { passed, checks })?;
    if passed {
        Ok("all property checks passed".into())
    } else {
        Err(CliError::Property(format!("{n_failed} check(s) failed: {}", names.join(", "))))
    }
}

pub fn study(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let problem = cfg.problem()?;
    let h = cfg.constraint()?;
    let s = cfg.study.as_ref().ok_or_else(|| CliError::Config("missing \"study\" block".into()))?;
    let exact = s
        .exact
        .as_deref()
        .map(Expression::parse)
        .transpose()
        .map_err(|e| CliError::Config(format!("study.exact: {e}")))?;
    if let Some(e) = &exact {
        e.eval(&vec![0.0; problem.dim()]).map_err(|e| CliError::Config(format!("study.exact: {e}")))?;
    }
    let f = |x: &[f64]| exact.as_ref().and_then(|e| e.eval(x).ok()).unwrap_or(f64::NAN);
    let reference = match exact {
        Some(_) => Reference::Analytic(&f),
        None => Reference::Finest,
    };
    let table = convergence_study(&problem, &h, &cfg.schedule, &s.shapes, &s.eps_levels, reference).map_err(|e| match e {
        DiagnosticsError::Solver(e) => CliError::Solver(e.to_string()),
        e => CliError::Config(e.to_string()),
    })?;
    table.write_csv(create(out, "rates.csv")?).map_err(|e| io_err("rates.csv")(e.to_string()))?;
    let fmt = |s: Option<f64>| s.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    Ok(format!(
        "study: value slope in h = {}, gradient slope in h = {}, value slope in eps = {}",
        fmt(table.h_value_slope),
        fmt(table.h_grad_slope),
        fmt(table.eps_value_slope)
    ))
}

#[derive(Debug, Serialize)]
struct McRow {
    #[serde(flatten)]
    estimate: McEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pde_value: Option<f64>,
}

#[derive(Debug, Serialize)]
struct McOutput {
    region: PolicyRegion,
    estimates: Vec<McRow>,
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let problem = cfg.problem()?;
    let m = cfg.mc.as_ref().ok_or_else(|| CliError::Config("missing \"mc\" block".into()))?;
    if problem.dim() != 1 {
        return Err(CliError::Config("simulate supports 1-dimensional problems only".into()));
    }
    let body = ConvexBody::from_spec(&m.body, 1).map_err(|e| CliError::Config(e.to_string()))?;
    let (region, solved) = match (&m.region, &cfg.constraint) {
        (Some(r), _) => (*r, None),
        (None, Some(_)) => {
            let report = run_solve(cfg, &problem)?;
            let r = PolicyRegion::from_free_boundary(&report.mask, &report.u)
                .map_err(|e| CliError::Config(e.to_string()))?;
            (r, Some(report.u))
        }
        (None, None) => {
            return Err(CliError::Config(
                "free boundary required: give mc.region or a constraint to solve for it".into(),
            ))
        }
    };
    let mut estimates = Vec::new();
    for &x0 in &m.x0 {
        let estimate = estimate_value(&problem, &region, &body, x0, m.n_paths, m.dt, m.seed)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let pde_value = solved.as_ref().map(|u| u.interpolate_1d(x0));
        estimates.push(McRow { estimate, pde_value });
    }
    let summary = estimates
        .iter()
        .map(|r| format!("u({}) ~ {:.4} +- {:.1e}", r.estimate.x0, r.estimate.mean, r.estimate.std_error))
        .collect::<Vec<_>>()
        .join(", ");
    write_json(out, "mc.json", &McOutput { region, estimates })?;
    Ok(format!("simulated: {summary}"))
}
