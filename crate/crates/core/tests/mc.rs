use gradhjb::convex::{ConstraintFunction, ConvexBody};
use gradhjb::mc::{estimate_value, simulate_path, EndpointAction, PolicyRegion};
use gradhjb::operator::EllipticProblem;
use gradhjb::solver::{solve_constrained, ContinuationSchedule, SolveReport};
use proptest::prelude::*;

fn active() -> EllipticProblem {
    EllipticProblem::constant(&[[-1.0, 1.0]], 1.0, 0.0, 1.0, 3.0).unwrap()
}

fn solved() -> SolveReport {
    let h = ConstraintFunction::norm_minus_constant(1, 1.0, 1.0).unwrap();
    solve_constrained(&active(), &h, &ContinuationSchedule::ending_at(1e-3).unwrap(), &[399]).unwrap()
}

#[test]
fn region_from_free_boundary_pushes_to_exit() {
    let r = solved();
    let region = PolicyRegion::from_free_boundary(&r.mask, &r.u).unwrap();
    assert_eq!(region.lo_action, EndpointAction::PushToExit);
    assert_eq!(region.hi_action, EndpointAction::PushToExit);
    assert!((region.hi + region.lo).abs() < 1e-12);
    // coth x = 2 + x has its root near 0.436.
    assert!((region.hi - 0.436).abs() < 0.02, "{region:?}");
}

#[test]
fn shrunken_regions_cost_more() {
    let r = solved();
    let k = ConvexBody::interval(-1.0, 1.0).unwrap();
    let best = PolicyRegion::from_free_boundary(&r.mask, &r.u).unwrap();
    let (dt, seed) = (1e-3, 5);
    let optimal = estimate_value(&active(), &best, &k, 0.0, 10_000, dt, seed).unwrap();
    let pde = r.u.interpolate_1d(0.0);
    assert!(optimal.mean >= pde - 3.0 * optimal.std_error - 0.01, "{optimal:?} vs {pde}");
    // Reflected paths only stop at the discount cutoff, so they get fewer samples.
    for (action, n) in [(EndpointAction::PushToExit, 10_000), (EndpointAction::Reflect, 500)] {
        for shrink in [0.5, 0.75] {
            let small = PolicyRegion::new(shrink * best.lo, shrink * best.hi, action, action);
            let e = estimate_value(&active(), &small, &k, 0.0, n, dt, seed).unwrap();
            assert!(e.mean > optimal.mean, "{shrink} {action:?}: {e:?} vs {optimal:?}");
        }
    }
}

#[test]
fn reflecting_at_the_free_boundary_is_worse_than_exiting() {
    let r = solved();
    let k = ConvexBody::interval(-1.0, 1.0).unwrap();
    let best = PolicyRegion::from_free_boundary(&r.mask, &r.u).unwrap();
    let reflect = PolicyRegion::new(best.lo, best.hi, EndpointAction::Reflect, EndpointAction::Reflect);
    let a = estimate_value(&active(), &best, &k, 0.0, 2_000, 1e-3, 1).unwrap();
    let b = estimate_value(&active(), &reflect, &k, 0.0, 200, 1e-3, 1).unwrap();
    assert!(b.mean > a.mean + 10.0 * (a.std_error + b.std_error), "{a:?} vs {b:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn control_paths_keep_invariants(
        lo in -0.9f64..-0.1,
        hi in 0.1f64..0.9,
        x in -0.1f64..0.1,
        reflect_lo in any::<bool>(),
        reflect_hi in any::<bool>(),
        seed in any::<u64>(),
        path in 0u64..1000,
    ) {
        let act = |r| if r { EndpointAction::Reflect } else { EndpointAction::PushToExit };
        let region = PolicyRegion::new(lo, hi, act(reflect_lo), act(reflect_hi));
        let k = ConvexBody::interval(-1.0, 2.0).unwrap();
        let p = simulate_path(&active(), &region, &k, x, 1e-3, seed, path).unwrap();
        prop_assert!(p.invariants_hold());
        let (last, inside) = p.x.split_last().unwrap();
        prop_assert!(inside.iter().all(|x| (lo..=hi).contains(x)));
        prop_assert!((lo..=hi).contains(last) || p.exited && last.abs() >= 1.0);
        prop_assert!(p.total_cost >= 0.0);
    }

    #[test]
    fn estimates_are_reproducible(seed in any::<u64>(), x in -0.3f64..0.3) {
        let region = PolicyRegion::new(-0.4, 0.4, EndpointAction::PushToExit, EndpointAction::Reflect);
        let k = ConvexBody::interval(-1.0, 1.0).unwrap();
        let a = estimate_value(&active(), &region, &k, x, 100, 1e-3, seed).unwrap();
        let b = estimate_value(&active(), &region, &k, x, 100, 1e-3, seed).unwrap();
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }
}
