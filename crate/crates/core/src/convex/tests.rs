use proptest::prelude::*;

use super::*;

fn norm1() -> ConstraintFunction {
    ConstraintFunction::norm_minus_constant(1, 1.0, 1.0).unwrap()
}

/// Brute-force `min_q |q| - 1 + |p - q|^2/(2t)` over a fine grid of `[-5, 5]`.
fn grid_envelope(p: f64, t: f64) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=100_000 {
        let q = -5.0 + 1e-4 * k as f64;
        let v = q.abs() - 1.0 + (p - q) * (p - q) / (2.0 * t);
        if v < best.0 {
            best = (v, q);
        }
    }
    best
}

/// Riemann-sum convolution of `f` with the normalized 1D bump of radius `rho`.
fn riemann_mollify(f: impl Fn(f64) -> f64, p: f64, rho: f64) -> f64 {
    let n = 200_000;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..n {
        let s = -1.0 + (k as f64 + 0.5) * 2.0 / n as f64;
        let w = (-1.0 / (1.0 - s * s)).exp();
        num += w * f(p - rho * s);
        den += w;
    }
    num / den
}

#[test]
fn catalog_values() {
    assert_eq!(norm1().value(&[0.0]).unwrap(), -1.0);
    let k = ConvexBody::interval(-1.0, 2.0).unwrap();
    assert_eq!(ConstraintFunction::support(k).value(&[0.0]).unwrap(), -1.0);
    let q = ConstraintFunction::quadratic(&[vec![1.0, 0.0], vec![0.0, 1.0]], 1.0).unwrap();
    assert_eq!(q.subgradient(&[1.0, 2.0]).unwrap(), vec![2.0, 4.0]);
    let n2 = ConstraintFunction::norm_minus_constant(2, 1.0, 1.0).unwrap();
    assert_eq!(n2.subgradient(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn envelope_matches_grid_oracle() {
    let (v, q) = grid_envelope(2.0, 0.5);
    let env = ConstraintFunction::moreau_envelope(norm1(), 0.5).unwrap();
    assert!((env.value(&[2.0]).unwrap() - v).abs() < 1e-8);
    assert!((env.value(&[2.0]).unwrap() - 0.75).abs() < 1e-12);
    let g = env.subgradient(&[2.0]).unwrap()[0];
    assert!((g - (2.0 - q) / 0.5).abs() < 1e-3);
    assert!((g - 1.0).abs() < 1e-12);
}

#[test]
fn generic_prox_matches_grid_oracle_for_interval() {
    // Interval(-3, 1) is |q + 1| - 2; route it through a support body in 2D-free form.
    let body = ConvexBody::interval(-3.0, 1.0).unwrap();
    let env = ConstraintFunction::moreau_envelope(ConstraintFunction::support(body), 0.5).unwrap();
    for p in [-4.0, -1.2, 0.0, 2.5] {
        let (v, _) = grid_envelope(p + 1.0, 0.5);
        assert!((env.value(&[p]).unwrap() - (v - 1.0)).abs() < 1e-7, "p = {p}");
    }
}

#[test]
fn polytope_envelope_via_nested_search() {
    // Square of half-width 1: H is the signed distance, whose envelope far outside
    // a face is dist - 1 - t/2.
    let body = ConvexBody::polytope(&[[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]).unwrap();
    let env = ConstraintFunction::moreau_envelope(ConstraintFunction::support(body), 0.2).unwrap();
    let v = env.value(&[3.0, 0.3]).unwrap();
    assert!((v - (2.0 - 0.1)).abs() < 1e-9, "{v}");
    let g = env.subgradient(&[3.0, 0.3]).unwrap();
    assert!((g[0] - 1.0).abs() < 1e-5 && g[1].abs() < 1e-5, "{g:?}");
}

#[test]
fn mollified_affine_is_exact() {
    for dim in [1usize, 2] {
        let d = [0.7, -1.3];
        let aff = ConstraintFunction::affine(&d[..dim], -0.4).unwrap();
        let m = ConstraintFunction::mollified(aff, 0.3).unwrap();
        let p = [1.1, 2.2];
        let exact: f64 = d[..dim].iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() - 0.4;
        assert!((m.value(&p[..dim]).unwrap() - exact).abs() < 1e-13);
    }
}

#[test]
fn mollified_envelope_matches_riemann_oracle() {
    let t = 0.5;
    let env = ConstraintFunction::moreau_envelope(norm1(), t).unwrap();
    let m = ConstraintFunction::mollified(env, 0.01).unwrap();
    let huber = |x: f64| if x.abs() <= t { x * x / (2.0 * t) - 1.0 } else { x.abs() - 1.0 - t / 2.0 };
    let v = m.value(&[2.0]).unwrap();
    assert!((v - 0.75).abs() < 1e-4);
    for p in [2.0, 0.495, 0.0, -0.3] {
        let oracle = riemann_mollify(huber, p, 0.01);
        assert!((m.value(&[p]).unwrap() - oracle).abs() < 1e-8, "p = {p}");
    }
}

#[test]
fn mollified_stays_within_local_modulus() {
    let env = ConstraintFunction::moreau_envelope(norm1(), 0.1).unwrap();
    let rho = 0.05;
    let m = ConstraintFunction::mollified(env.clone(), rho).unwrap();
    for p in [-1.0, 0.02, 0.3] {
        let base = env.value(&[p]).unwrap();
        let modulus = (0..=200)
            .map(|k| env.value(&[p - rho + 2.0 * rho * k as f64 / 200.0]).unwrap() - base)
            .fold(0.0f64, |a, b| a.max(b.abs()));
        assert!((m.value(&[p]).unwrap() - base).abs() <= modulus + 1e-12);
    }
}

#[test]
fn convexified_constant_stub() {
    let stub = ConstraintFunction::affine(&[0.0, 0.0], -1.0).unwrap();
    let h = ConstraintFunction::convexified(stub, 0.2).unwrap();
    assert!((h.value(&[1.0, 1.0]).unwrap() + 0.6).abs() < 1e-15);
    assert_eq!(h.convexification_weight(), Some(0.2));
}

#[test]
fn ladder_origin_value() {
    for dim in [1usize, 2] {
        let h0 = ConstraintFunction::norm_minus_constant(dim, 1.0, 1.0).unwrap();
        let h = ConstraintFunction::build_regularized(h0, 0.1, 0.01, 0.01).unwrap();
        let v = h.value(&vec![0.0; dim]).unwrap();
        assert!((-1.01..=-0.9).contains(&v), "{v}");
        assert!(h.curvature_lower_bound() >= 0.02);
    }
}

#[test]
fn ladder_rejects_lifted_origin() {
    let h0 = ConstraintFunction::norm_minus_constant(1, 1.0, 0.05).unwrap();
    let err = ConstraintFunction::build_regularized(h0, 0.1, 0.4, 0.5).unwrap_err();
    assert!(matches!(err, ConvexError::OriginNotNegative { value } if value >= 0.0));
}

#[test]
fn rejects_bad_parameters() {
    assert!(ConstraintFunction::norm_minus_constant(3, 1.0, 1.0).is_err());
    assert!(ConstraintFunction::norm_minus_constant(1, 0.0, 1.0).is_err());
    assert!(ConstraintFunction::quadratic(&[vec![1.0, 2.0], vec![2.0, 1.0]], 1.0).is_err());
    assert!(ConstraintFunction::quadratic(&[vec![1.0, 0.5], vec![0.0, 1.0]], 1.0).is_err());
    assert!(ConstraintFunction::convexified(norm1(), 1.0).is_err());
    assert!(ConstraintFunction::build_regularized(norm1(), 1.5, 0.1, 0.1).is_err());
    assert!(matches!(norm1().value(&[1.0, 2.0]), Err(ConvexError::Dimension { expected: 1, got: 2 })));
}

#[test]
fn spec_json_round_trip() {
    let json = r#"{"kind":"regularized","base":{"kind":"norm","r":1.0},"t":0.1,"rho":0.01,"theta":0.01}"#;
    let spec: ConstraintSpec = serde_json::from_str(json).unwrap();
    let h = ConstraintFunction::from_spec(&spec, 1).unwrap();
    assert_eq!(h.kind_name(), "convexified");
    let back: ConstraintSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
    assert_eq!(back, spec);
    let q: ConstraintSpec = serde_json::from_str(r#"{"kind":"quadratic","M":[[2,0],[0,1]],"r2":0.5}"#).unwrap();
    assert!(ConstraintFunction::from_spec(&q, 2).is_ok());
    assert!(ConstraintFunction::from_spec(&q, 1).is_err());
}

#[test]
fn envelope_report_examples() {
    let quad = ConstraintFunction::quadratic(&[vec![1.0]], 1.0).unwrap();
    let s = |p: f64, z: f64| EnvelopeSample { p: vec![p], z: vec![z] };
    let r = check_envelope_properties(&quad, 0.5, &[s(0.0, 1.0)]).unwrap();
    assert!((r.second_differences[0] - 1.0).abs() < 1e-12);
    assert_eq!(r.theta, Some(2.0));
    assert!(r.holds(1e-10));

    let r = check_envelope_properties(&norm1(), 0.5, &[s(0.3, 0.0), s(0.0, 0.25)]).unwrap();
    assert_eq!(r.second_differences[0], 0.0);
    assert!((r.second_differences[1] - 0.125).abs() < 1e-12);
    assert!(r.max_upper_violation.abs() < 1e-12);
    assert!(r.theta.is_none() && r.holds(1e-12));
}

#[test]
fn envelope_report_2d_quadratic_locality() {
    let quad = ConstraintFunction::quadratic(&[vec![1.5, 0.3], vec![0.3, 0.8]], 1.0).unwrap();
    let samples: Vec<_> = [([0.2, -0.4], [0.5, 0.1]), ([1.0, 1.0], [-0.3, 0.7])]
        .iter()
        .map(|(p, z)| EnvelopeSample { p: p.to_vec(), z: z.to_vec() })
        .collect();
    let r = check_envelope_properties(&quad, 0.3, &samples).unwrap();
    assert!(r.holds(1e-9), "{r:?}");
    assert!(r.max_locality_violation.unwrap() < 0.0);
}

fn sample_function(which: u8) -> ConstraintFunction {
    match which % 9 {
        0 => norm1(),
        1 => ConstraintFunction::norm_minus_constant(2, 1.5, 0.7).unwrap(),
        2 => ConstraintFunction::quadratic(&[vec![1.5, 0.3], vec![0.3, 0.8]], 1.0).unwrap(),
        3 => ConstraintFunction::support(ConvexBody::interval(-1.0, 2.0).unwrap()),
        4 => ConstraintFunction::support(ConvexBody::ball(2, 0.5).unwrap()),
        5 => ConstraintFunction::support(
            ConvexBody::polytope(&[[1.0, 0.0], [0.0, 2.0], [-1.5, -0.5], [0.5, -1.0]]).unwrap(),
        ),
        6 => ConstraintFunction::moreau_envelope(norm1(), 0.3).unwrap(),
        7 => ConstraintFunction::build_regularized(
            ConstraintFunction::norm_minus_constant(2, 1.0, 1.0).unwrap(),
            0.1,
            0.05,
            0.1,
        )
        .unwrap(),
        _ => ConstraintFunction::build_regularized(norm1(), 0.2, 0.02, 0.05).unwrap(),
    }
}

fn point(dim: usize, v: [f64; 2]) -> Vec<f64> {
    v[..dim].to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn origin_is_strictly_negative(which in 0u8..9) {
        let h = sample_function(which);
        prop_assert!(h.value(&vec![0.0; h.dim()]).unwrap() < 0.0);
    }

    #[test]
    fn convex_along_segments(which in 0u8..9, p in prop::array::uniform2(-3.0f64..3.0),
                             q in prop::array::uniform2(-3.0f64..3.0), s in 0.0f64..1.0) {
        let h = sample_function(which);
        let (p, q) = (point(h.dim(), p), point(h.dim(), q));
        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| s * a + (1.0 - s) * b).collect();
        let lhs = h.value(&mid).unwrap();
        let rhs = s * h.value(&p).unwrap() + (1.0 - s) * h.value(&q).unwrap();
        prop_assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
    }

    #[test]
    fn subgradient_inequality(which in 0u8..9, p in prop::array::uniform2(-3.0f64..3.0),
                              q in prop::array::uniform2(-3.0f64..3.0)) {
        let h = sample_function(which);
        let (p, q) = (point(h.dim(), p), point(h.dim(), q));
        let g = h.subgradient(&p).unwrap();
        let lin: f64 = g.iter().zip(q.iter().zip(&p)).map(|(g, (a, b))| g * (a - b)).sum();
        prop_assert!(h.value(&q).unwrap() >= h.value(&p).unwrap() + lin - 1e-9);
    }

    #[test]
    fn support_sign_matches_membership(kind in 0u8..3, p in prop::array::uniform2(-3.0f64..3.0)) {
        let body = match kind {
            0 => ConvexBody::interval(-1.0, 2.0).unwrap(),
            1 => ConvexBody::ball(2, 1.2).unwrap(),
            _ => ConvexBody::polytope(&[[1.0, 0.0], [0.0, 2.0], [-1.5, -0.5], [0.5, -1.0]]).unwrap(),
        };
        let p = point(body.dim(), p);
        let h = ConstraintFunction::support(body.clone()).value(&p).unwrap();
        prop_assume!(h.abs() > 1e-9);
        prop_assert_eq!(h <= 0.0, body.contains(&p));
    }

    #[test]
    fn envelope_below_base(which in 0u8..6, p in prop::array::uniform2(-3.0f64..3.0), t in 0.01f64..1.0) {
        let h = sample_function(which);
        let p = point(h.dim(), p);
        let env = ConstraintFunction::moreau_envelope(h.clone(), t).unwrap();
        prop_assert!(env.value(&p).unwrap() <= h.value(&p).unwrap() + 1e-12);
    }

    #[test]
    fn second_difference_upper_bound(which in 0u8..6, p in prop::array::uniform2(-3.0f64..3.0),
                                     z in prop::array::uniform2(-1.0f64..1.0), t in 0.01f64..1.0) {
        let h = sample_function(which);
        let sample = EnvelopeSample { p: point(h.dim(), p), z: point(h.dim(), z) };
        let r = check_envelope_properties(&h, t, &[sample]).unwrap();
        prop_assert!(r.max_upper_violation <= 1e-8, "{r:?}");
        if let Some(v) = r.max_lower_violation {
            prop_assert!(v <= 1e-8, "{r:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn envelope_monotone_convergence(which in 0u8..6, p in prop::array::uniform2(-3.0f64..3.0)) {
        let h = sample_function(which);
        let p = point(h.dim(), p);
        let base = h.value(&p).unwrap();
        // Local Lipschitz constant over a neighborhood covering the prox points.
        let lip = (0..=20)
            .flat_map(|i| (0..=20).map(move |j| [-4.0 + 0.4 * i as f64, -4.0 + 0.4 * j as f64]))
            .map(|w| {
                let g = h.subgradient(&point(h.dim(), w)).unwrap();
                g.iter().map(|x| x * x).sum::<f64>().sqrt()
            })
            .fold(0.0f64, f64::max);
        let mut prev = f64::NEG_INFINITY;
        for t in [0.5, 0.25, 0.1, 0.05] {
            let v = ConstraintFunction::moreau_envelope(h.clone(), t).unwrap().value(&p).unwrap();
            prop_assert!(v >= prev - 1e-12);
            prop_assert!(base - v <= 10.0 * t * lip * lip + 1e-12);
            prev = v;
        }
    }
}
