//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Run alone with `cargo test -p gradhjb --test acceptance`.

use std::time::{Duration, Instant};

use gradhjb::convex::{
    check_envelope_properties, BodySpec, ConstraintFunction, ConvexBody, EnvelopeSample,
};
use gradhjb::diagnostics::{
    comparison_test, convergence_study, regularity_scan, sandwich_check, OrderedPair, Reference, RegularityEntry,
};
use gradhjb::expr::Expression;
use gradhjb::mc::{estimate_value, EndpointAction, PolicyRegion};
use gradhjb::operator::EllipticProblem;
use gradhjb::penalty::{check_invariants, PenaltyFamily};
use gradhjb::solver::{continuation, solve_constrained, solve_linear, ContinuationSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

fn bench(f: f64) -> EllipticProblem {
    EllipticProblem::constant(&[[-1.0, 1.0]], 1.0, 0.0, 1.0, f).unwrap()
}

fn abs_minus_one(dim: usize) -> ConstraintFunction {
    ConstraintFunction::norm_minus_constant(dim, 1.0, 1.0).unwrap()
}

fn square_minus_one(dim: usize) -> ConstraintFunction {
    let m: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    ConstraintFunction::quadratic(&m, 1.0).unwrap()
}

fn schedule(eps_list: &[f64]) -> ContinuationSchedule {
    ContinuationSchedule::new(eps_list.to_vec(), Default::default()).unwrap()
}

fn exact_inactive(x: f64) -> f64 {
    1.0 - x.cosh() / 1f64.cosh()
}

/// Interior points for spacing `h` on `[-1, 1]`.
fn points(h: f64) -> usize {
    (2.0 / h).round() as usize - 1
}

fn c1_inactive() -> Outcome {
    let sched = ContinuationSchedule::ending_at(1e-3).map_err(|e| e.to_string())?;
    let r = solve_constrained(&bench(1.0), &abs_minus_one(1), &sched, &[points(1e-3)]).map_err(|e| e.to_string())?;
    let g = r.u.grid();
    let err = (0..g.len()).map(|i| (r.u.values()[i] - exact_inactive(g.point(i)[0])).abs()).fold(0.0, f64::max);
    Ok((err <= 5e-3 && r.eps_final() <= 1e-3, format!("max error {err:.3e} (<= 5e-3), eps_final {:e}", r.eps_final())))
}

fn c2_active() -> Outcome {
    let sched = ContinuationSchedule::ending_at(1e-3).map_err(|e| e.to_string())?;
    let r = solve_constrained(&bench(3.0), &abs_minus_one(1), &sched, &[points(1e-3)]).map_err(|e| e.to_string())?;
    let c = &r.complementarity;
    let s = sandwich_check(&r.u, &r.u_bar, 1e-8);
    let ok = c.max_h <= 1e-2 && c.max_pde <= 1e-2 && c.max_min_slack <= 5e-2 && s.passed;
    Ok((
        ok,
        format!(
            "max H(D_h u) {:.2e}, max (L_h u - f) {:.2e}, max min-slack {:.2e}, sandwich violation {:.1e}",
            c.max_h, c.max_pde, c.max_min_slack, s.max_violation
        ),
    ))
}

fn c3_penalty() -> Outcome {
    let mut worst = 0.0f64;
    let mut ok = true;
    let mut n = 0;
    for eps in [0.5, 0.1, 0.01] {
        let fam = PenaltyFamily::new(eps).map_err(|e| e.to_string())?;
        for c in check_invariants(&fam, 10_000, 1e-9) {
            ok &= c.passed;
            worst = worst.max(c.max_violation);
            n += 1;
        }
    }
    Ok((ok, format!("{n} invariant checks, worst violation {worst:.1e} (<= 1e-9)")))
}

fn c4_envelope() -> Outcome {
    let tol = 1e-8;
    let polytope = ConvexBody::from_spec(
        &BodySpec::Polytope { vertices: vec![[-1.0, -0.5], [1.5, -0.5], [0.5, 1.0], [-1.0, 0.8]] },
        2,
    )
    .map_err(|e| e.to_string())?;
    let quad2 = ConstraintFunction::quadratic(&[vec![2.0, 0.5], vec![0.5, 1.0]], 1.0).map_err(|e| e.to_string())?;
    let bases = [
        ("|p| - 1 (1D)", abs_minus_one(1)),
        ("|p| - 1 (2D)", abs_minus_one(2)),
        ("support of a polytope", ConstraintFunction::support(polytope)),
        ("quadratic (1D)", square_minus_one(1)),
        ("quadratic (2D)", quad2),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut origin, mut upper, mut lower, mut local) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut quad_samples = 0;
    for (_, h0) in &bases {
        let d = h0.dim();
        for _ in 0..1000 {
            let t = rng.random_range(0.01..1.0);
            let s = EnvelopeSample {
                p: (0..d).map(|_| rng.random_range(-3.0..3.0)).collect(),
                z: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            };
            let env = ConstraintFunction::moreau_envelope(h0.clone(), t).map_err(|e| e.to_string())?;
            origin = origin.max(env.value(&vec![0.0; d]).map_err(|e| e.to_string())?);
            let r = check_envelope_properties(h0, t, std::slice::from_ref(&s)).map_err(|e| e.to_string())?;
            upper = upper.max(r.max_upper_violation);
            if let (Some(lo), Some(lc)) = (r.max_lower_violation, r.max_locality_violation) {
                lower = lower.max(lo);
                local = local.max(lc);
                quad_samples += 1;
            }
        }
    }
    let ok = origin < 0.0 && upper <= tol && lower <= tol && local <= tol && quad_samples == 2000;
    Ok((
        ok,
        format!(
            "{} bases x 1000 samples: max H^t(0) {origin:.3}, upper {upper:.1e}, lower {lower:.1e}, local {local:.1e} (tol 1e-8)",
            bases.len()
        ),
    ))
}

fn expr(s: &str) -> Expression {
    Expression::parse(s).unwrap()
}

fn c5_comparison() -> Outcome {
    let base = bench(0.0);
    let pair = |label: &str, lo: &str, hi: &str| OrderedPair {
        label: label.into(),
        lower: base.with_source(expr(lo)),
        upper: base.with_source(expr(hi)),
    };
    let f3 = base.with_source(expr("3"));
    let pairs = vec![
        pair("0 <= 1", "0", "1"),
        pair("1 <= 3", "1", "3"),
        pair("1 + x1^2 <= 2 + x1^2", "1 + x1^2", "2 + x1^2"),
        pair("3 |x1| <= 3", "3 * abs(x1)", "3"),
        pair("exp(x1) <= 3", "exp(x1)", "3"),
        OrderedPair { label: "g = 0 <= g = 0.2".into(), lower: f3.clone(), upper: f3.with_boundary(expr("0.2")) },
    ];
    let sched = schedule(&[0.5, 0.1, 0.01, 0.001]);
    match comparison_test(&pairs, &abs_minus_one(1), &sched, &[399]) {
        Ok(r) => {
            let worst = r.pairs.iter().map(|p| p.max_violation).fold(f64::NEG_INFINITY, f64::max);
            Ok((r.pairs.iter().all(|p| p.passed), format!("{} pairs ordered, max(u1 - u2) = {worst:.2e}", r.pairs.len())))
        }
        Err(e) => Ok((false, e.to_string())),
    }
}

fn c6_regularity() -> Outcome {
    let h = square_minus_one(1);
    let levels = [1e-1, 1e-2, 1e-3];
    let sched = schedule(&[0.5, 0.1, 0.01, 0.001]);
    let mut entries = Vec::new();
    let fine = points(1.0 / 200.0);
    for n in [fine, points(1.0 / 100.0)] {
        let op = bench(3.0).assemble(&[n]).map_err(|e| e.to_string())?;
        let start = solve_linear(&op).map_err(|e| e.to_string())?;
        continuation(&op, &h, &sched, &start, |rec, u| {
            if levels.iter().any(|l| (rec.eps - l).abs() <= 1e-12 * l) {
                entries.push(RegularityEntry { eps: rec.eps, u: u.clone() });
            }
        })
        .map_err(|e| e.to_string())?;
    }
    let report = regularity_scan(&entries, None).map_err(|e| e.to_string())?;
    let hf = 1.0 / 200.0;
    let var = report
        .eps_variation
        .iter()
        .find(|v| (v.h - hf).abs() <= 1e-12)
        .ok_or("no eps variation at the fine grid")?;
    let sups: Vec<String> = report
        .rows
        .iter()
        .filter(|r| (r.h - hf).abs() <= 1e-12)
        .map(|r| format!("{:.3}", r.sup_second_diff))
        .collect();

    let reg = ConstraintFunction::build_regularized(abs_minus_one(1), 1e-2, 1e-2, 1e-2).map_err(|e| e.to_string())?;
    let r = solve_constrained(&bench(3.0), &reg, &sched, &[fine]).map_err(|e| e.to_string())?;
    let grad = r.history.last().map_or(f64::INFINITY, |s| s.grad_inf);

    Ok((
        var.relative_spread < 0.2 && grad <= 1.1,
        format!(
            "|p|^2 - 1: sup second differences [{}] spread {:.1}% (< 20%); regularized |p| - 1: max |D_h u| {grad:.4} (<= 1.1)",
            sups.join(", "),
            100.0 * var.relative_spread
        ),
    ))
}

fn c7_monte_carlo() -> Outcome {
    let k = ConvexBody::interval(-1.0, 1.0).map_err(|e| e.to_string())?;
    let whole = PolicyRegion::new(-1.0, 1.0, EndpointAction::PushToExit, EndpointAction::PushToExit);
    let e = estimate_value(&bench(1.0), &whole, &k, 0.0, 100_000, 1e-4, 17).map_err(|e| e.to_string())?;
    let target = 1.0 - 1.0 / 1f64.cosh();
    let mut ok = (e.mean - target).abs() <= 3.0 * e.std_error + 0.02;
    let mut msg = format!("inactive u(0): MC {:.4} +- {:.1e} vs {target:.4}", e.mean, e.std_error);

    let sched = ContinuationSchedule::ending_at(1e-3).map_err(|e| e.to_string())?;
    let r = solve_constrained(&bench(3.0), &abs_minus_one(1), &sched, &[points(1e-3)]).map_err(|e| e.to_string())?;
    let region = PolicyRegion::from_free_boundary(&r.mask, &r.u).map_err(|e| e.to_string())?;
    msg += &format!("; active region [{:.3}, {:.3}]", region.lo, region.hi);
    for x in [-0.4, 0.0, 0.4] {
        let e = estimate_value(&bench(3.0), &region, &k, x, 100_000, 1e-4, 17).map_err(|e| e.to_string())?;
        let pde = r.u.interpolate_1d(x);
        let dev = (e.mean - pde).abs();
        ok &= dev <= 3.0 * e.std_error + 0.05;
        msg += &format!(", u({x}): MC {:.4} +- {:.1e} vs PDE {pde:.4}", e.mean, e.std_error);
    }
    Ok((ok, msg))
}

fn c8_rates() -> Outcome {
    let exact = |x: &[f64]| exact_inactive(x[0]);
    let t = convergence_study(
        &bench(1.0),
        &abs_minus_one(1),
        &schedule(&[0.5, 0.1, 0.01, 0.001]),
        &[vec![19], vec![39], vec![79]],
        &[1e-1, 1e-2, 1e-3],
        Reference::Analytic(&exact),
    )
    .map_err(|e| e.to_string())?;
    let slope = t.h_value_slope.ok_or("no h slope")?;
    Ok(((1.8..=2.2).contains(&slope), format!("value-error slope in h {slope:.3} over 3 levels (in [1.8, 2.2])")))
}

fn c9_two_d() -> Outcome {
    let p = EllipticProblem::constant(&[[-1.0, 1.0], [-1.0, 1.0]], 1.0, 0.0, 1.0, 3.0).map_err(|e| e.to_string())?;
    let r = solve_constrained(&p, &square_minus_one(2), &schedule(&[0.5, 0.1, 0.05, 0.01]), &[127, 127])
        .map_err(|e| e.to_string())?;
    let defect = r.mask.symmetry_defect();
    let c = r.mask.counts();
    Ok((
        r.complementarity_residual <= 5e-2 && defect == 0,
        format!(
            "h = 1/64, eps = {:e}: complementarity residual {:.3e} (<= 5e-2), {} constraint-active points, symmetry defects {defect}",
            r.eps_final(),
            r.complementarity_residual,
            c.constraint_active
        ),
    ))
}

fn main() {
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 9] = [
        (1, "inactive-constraint benchmark", Duration::from_secs(10), c1_inactive),
        (2, "active-constraint benchmark", Duration::from_secs(30), c2_active),
        (3, "penalty certification", Duration::from_secs(1), c3_penalty),
        (4, "Moreau-envelope suite", Duration::from_secs(10), c4_envelope),
        (5, "comparison principle", Duration::from_secs(60), c5_comparison),
        (6, "regularity trend", Duration::from_secs(120), c6_regularity),
        (7, "Monte Carlo cross-check", Duration::from_secs(300), c7_monte_carlo),
        (8, "convergence orders", Duration::from_secs(120), c8_rates),
        (9, "2D smoke test", Duration::from_secs(300), c9_two_d),
    ];
    let mut failures = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let in_time = took <= budget;
        let (ok, detail) = match outcome {
            Ok((ok, d)) => (ok && in_time, d),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "criterion {id} {}: {name}: {detail} [{:.2}s of {}s]",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}
