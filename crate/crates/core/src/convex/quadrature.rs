//! Gauss–Legendre rules and the discrete mollifier built on them.

use nalgebra::Vector2;

use super::Vec2;

/// Nodes per axis of the mollifier rule.
pub const MOLLIFIER_NODES: usize = 16;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Unnormalized bump `exp(-1/(1-r^2))` on `r < 1`.
pub fn bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// Offsets `s_k` in the unit ball and weights `w_k` with `sum w_k = 1`, such that
/// `(eta_rho * F)(p) ~ sum_k w_k F(p - rho s_k)`.
///
/// Weights are normalized on the discrete rule itself, so constants are reproduced
/// exactly; the node set is symmetric, so affine functions are too.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifierRule {
    pub offsets: Vec<Vec2>,
    pub weights: Vec<f64>,
}

impl MollifierRule {
    pub fn new(dim: usize) -> Self {
        let (x, w) = gauss_legendre(MOLLIFIER_NODES);
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        if dim == 1 {
            for (xi, wi) in x.iter().zip(&w) {
                offsets.push(Vector2::new(*xi, 0.0));
                weights.push(wi * bump(xi * xi));
            }
        } else {
            for (xi, wi) in x.iter().zip(&w) {
                for (yj, wj) in x.iter().zip(&w) {
                    let eta = bump(xi * xi + yj * yj);
                    if eta > 0.0 {
                        offsets.push(Vector2::new(*xi, *yj));
                        weights.push(wi * wj * eta);
                    }
                }
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self { offsets, weights }
    }
}
