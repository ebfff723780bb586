//! Penalization solver for elliptic equations with convex gradient constraints,
//! `max{Lu - f, H(Du)} = 0` on a box with Dirichlet data.

pub mod convex;
pub mod expr;
pub mod linalg;
pub mod operator;
pub mod penalty;
pub mod diagnostics;
pub mod solver;
pub mod mc;
