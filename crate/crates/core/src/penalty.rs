//! Penalty family `beta_eps(z) = phi(z/eps)`.
//!
//! `phi` vanishes on `s <= 0`, equals `s - 1` on `s >= 2` and is bridged by
//! `s^2/4` in between, which makes it C^{1,1}, convex and non-decreasing with
//! `phi(s) <= s phi'(s)`.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PenaltyError {
    #[error("penalty parameter must be positive and finite, got {0}")]
    Epsilon(f64),
}

/// Shape of `phi` on `[0, 2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Bridge {
    /// `s^2/4`.
    #[default]
    Quadratic,
    /// `s - s^2/4`: matches the endpoint values but is concave. Only for
    /// checking that the invariant suite catches a broken penalty.
    #[doc(hidden)]
    ConcaveFault,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyFamily {
    epsilon: f64,
    bridge: Bridge,
}

impl PenaltyFamily {
    pub fn new(epsilon: f64) -> Result<Self, PenaltyError> {
        Self::with_bridge(epsilon, Bridge::Quadratic)
    }

    pub fn with_bridge(epsilon: f64, bridge: Bridge) -> Result<Self, PenaltyError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(PenaltyError::Epsilon(epsilon));
        }
        Ok(Self { epsilon, bridge })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn bridge(&self) -> Bridge {
        self.bridge
    }

    fn phi(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if s >= 2.0 {
            s - 1.0
        } else {
            match self.bridge {
                Bridge::Quadratic => 0.25 * s * s,
                Bridge::ConcaveFault => s - 0.25 * s * s,
            }
        }
    }

    fn dphi(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if s >= 2.0 {
            1.0
        } else {
            match self.bridge {
                Bridge::Quadratic => 0.5 * s,
                Bridge::ConcaveFault => 1.0 - 0.5 * s,
            }
        }
    }

    pub fn beta(&self, z: f64) -> f64 {
        self.phi(z / self.epsilon)
    }

    pub fn beta_prime(&self, z: f64) -> f64 {
        self.dphi(z / self.epsilon) / self.epsilon
    }
}

/// Outcome of one invariant over a sample set.
#[derive(Debug, Clone, Serialize)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
    pub max_violation: f64,
}

/// Evaluates every invariant of the family on `samples` evenly spaced points of
/// `[-3, 3]` (and of `[2 eps, 3]` for the linear tail), with absolute tolerance `tol`.
pub fn check_invariants(fam: &PenaltyFamily, samples: usize, tol: f64) -> Vec<InvariantCheck> {
    let eps = fam.epsilon();
    let grid = |a: f64, b: f64| (0..samples).map(move |k| a + (b - a) * k as f64 / (samples - 1) as f64);
    let zs: Vec<f64> = grid(-3.0, 3.0).collect();
    let mut out = Vec::new();
    let mut push = |name, v: f64| out.push(InvariantCheck { name, passed: v <= tol, max_violation: v.max(0.0) });

    let zero = zs.iter().filter(|z| **z <= 0.0).map(|z| fam.beta(*z).abs()).fold(0.0, f64::max);
    push("zero_below_origin", zero);

    let tail = grid(2.0 * eps, 3.0f64.max(4.0 * eps))
        .map(|z| (fam.beta(z) - (z - eps) / eps).abs())
        .fold(0.0, f64::max);
    push("linear_tail", tail);

    let mono = zs.windows(2).map(|w| fam.beta(w[0]) - fam.beta(w[1])).fold(0.0, f64::max);
    let mono_d = zs.iter().map(|z| -fam.beta_prime(*z)).fold(0.0, f64::max);
    push("non_decreasing", mono.max(mono_d));

    // Chords above the graph and non-decreasing derivative.
    let convex = zs
        .windows(3)
        .map(|w| fam.beta(w[1]) - 0.5 * (fam.beta(w[0]) + fam.beta(w[2])))
        .fold(0.0, f64::max);
    let convex_d = zs.windows(2).map(|w| fam.beta_prime(w[0]) - fam.beta_prime(w[1])).fold(0.0, f64::max);
    push("convex", convex.max(convex_d));

    let euler = zs.iter().map(|z| fam.beta(*z) - z * fam.beta_prime(*z)).fold(0.0, f64::max);
    push("beta_below_z_beta_prime", euler);

    out
}
