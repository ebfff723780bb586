//! Banded direct solver.
//!
//! Storage follows the LAPACK `gbtrf` layout: a row-major `n x (2*kl + ku + 1)`
//! window per row, with `kl` extra upper diagonals reserved for the fill-in
//! produced by row interchanges.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is numerically singular at pivot {0}")]
    Singular(usize),
    #[error("right-hand side has length {got}, expected {expected}")]
    Length { expected: usize, got: usize },
}

/// General band matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        // column offset within row i: j - i + kl, shifted so the leftmost stored entry is i - kl
        i * self.width + (j + self.kl - i)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// Row sums of |A_ij| |x_j|.
    pub fn abs_matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| (self.data[self.slot(i, j)] * x[j]).abs()).sum()
            })
            .collect()
    }

    /// In-place LU factorization with partial pivoting.
    pub fn factorize(mut self) -> Result<BandLu, LinalgError> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let kv = ku + kl; // upper bandwidth of U after pivoting
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=last {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(LinalgError::Singular(k));
            }
            piv[k] = p;
            let right = (k + kv).min(n - 1);
            if p != k {
                for j in k..=right {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=last {
                let s = self.slot(i, k);
                let m = self.data[s] / pivot;
                self.data[s] = m;
                if m != 0.0 {
                    for j in k + 1..=right {
                        let src = self.data[self.slot(k, j)];
                        let dst = self.slot(i, j);
                        self.data[dst] -= m * src;
                    }
                }
            }
        }
        Ok(BandLu { m: self, piv })
    }
}

/// Factorized band matrix ready for repeated solves.
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<(), LinalgError> {
        let m = &self.m;
        let n = m.n;
        if b.len() != n {
            return Err(LinalgError::Length { expected: n, got: b.len() });
        }
        let kv = m.kl + m.ku;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + m.kl).min(n - 1) {
                    b[i] -= m.data[m.slot(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + kv).min(n - 1) {
                s -= m.data[m.slot(k, j)] * b[j];
            }
            b[k] = s / m.data[m.slot(k, k)];
        }
        Ok(())
    }
}

/// Factorize and solve `A x = b` in one call.
pub fn solve_banded(a: BandMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let lu = a.factorize()?;
    let mut x = b.to_vec();
    lu.solve_in_place(&mut x)?;
    Ok(x)
}
