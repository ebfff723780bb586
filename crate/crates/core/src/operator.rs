//! Problem data for `Lu = -a D^2 u + b.Du + c u` on a box, the uniform grid it is
//! discretized on, and the monotone finite-difference operator.
//!
//! Grid layout: `n_i` interior points per axis plus one boundary layer on each
//! side, so `h_i = (hi_i - lo_i)/(n_i + 1)`. Values are stored row-major over the
//! full `(n_1 + 2) x (n_2 + 2)` grid, `idx = i1 * (n2 + 2) + i2`. Unknowns are the
//! interior points in the same order.

use std::io::{Read, Write};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprError, Expression};
use crate::linalg::{BandMatrix, LinalgError};

pub type Vec2 = Vector2<f64>;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("coefficient `{name}`: {source}")]
    Expr {
        name: String,
        #[source]
        source: ExprError,
    },
    #[error("ellipticity violated: min a = {min} at x = {at:?}")]
    Ellipticity { min: f64, at: Vec<f64> },
    #[error("c floor violated: min c = {min} at x = {at:?}")]
    CFloor { min: f64, at: Vec<f64> },
    #[error("negative source: min f = {min} at x = {at:?}")]
    NegativeSource { min: f64, at: Vec<f64> },
    #[error("monotonicity violated on axis {axis}: h = {h} exceeds the admissible {h_max}")]
    Monotonicity { axis: usize, h: f64, h_max: f64 },
    #[error("assembled matrix is not an M-matrix at row {row}")]
    NotMMatrix { row: usize },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("grid csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Uniform tensor grid with an explicit boundary layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    n: [usize; 2],
    lo: [f64; 2],
    hi: [f64; 2],
    h: [f64; 2],
}

impl Grid {
    pub fn new(lo: &[f64], hi: &[f64], shape: &[usize]) -> Result<Self, OperatorError> {
        let dim = shape.len();
        if !(dim == 1 || dim == 2) || lo.len() != dim || hi.len() != dim {
            return Err(OperatorError::Grid(format!(
                "need matching box and shape of dimension 1 or 2, got box {lo:?}..{hi:?} and shape {shape:?}"
            )));
        }
        let mut g = Grid { dim, n: [1, 1], lo: [0.0; 2], hi: [0.0; 2], h: [1.0; 2] };
        for k in 0..dim {
            if shape[k] < 3 {
                return Err(OperatorError::Grid(format!("need at least 3 interior points per axis, got {}", shape[k])));
            }
            if !(lo[k].is_finite() && hi[k].is_finite() && lo[k] < hi[k]) {
                return Err(OperatorError::Grid(format!("axis {k} has empty range [{}, {}]", lo[k], hi[k])));
            }
            g.n[k] = shape[k];
            g.lo[k] = lo[k];
            g.hi[k] = hi[k];
            g.h[k] = (hi[k] - lo[k]) / (shape[k] + 1) as f64;
        }
        Ok(g)
    }

    /// Grid on `[lo, hi]^dim` with spacing as close to `h` as the box allows.
    pub fn with_spacing(lo: &[f64], hi: &[f64], h: f64) -> Result<Self, OperatorError> {
        let shape: Vec<usize> = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| (((b - a) / h).round() as usize).saturating_sub(1))
            .collect();
        Self::new(lo, hi, &shape)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> Vec<usize> {
        self.n[..self.dim].to_vec()
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.h[..self.dim].to_vec()
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn lo(&self) -> Vec<f64> {
        self.lo[..self.dim].to_vec()
    }

    pub fn hi(&self) -> Vec<f64> {
        self.hi[..self.dim].to_vec()
    }

    /// Points per axis including the boundary layer.
    fn full(&self, axis: usize) -> usize {
        if axis < self.dim {
            self.n[axis] + 2
        } else {
            1
        }
    }

    pub fn len(&self) -> usize {
        self.full(0) * self.full(1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn unknowns(&self) -> usize {
        self.n[..self.dim].iter().product()
    }

    /// Offset between neighbors along `axis` in the full storage.
    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 && self.dim == 2 {
            self.full(1)
        } else {
            1
        }
    }

    /// Offset between neighbors along `axis` in the unknown numbering.
    pub fn unknown_stride(&self, axis: usize) -> usize {
        if axis == 0 && self.dim == 2 {
            self.n[1]
        } else {
            1
        }
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i == self.n[axis] + 1 {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.h[axis]
        }
    }

    /// Multi-index `(i1, i2)` of a storage index; `i2 = 0` in 1D.
    pub fn multi(&self, idx: usize) -> (usize, usize) {
        if self.dim == 1 {
            (idx, 0)
        } else {
            (idx / self.full(1), idx % self.full(1))
        }
    }

    pub fn index(&self, i1: usize, i2: usize) -> usize {
        if self.dim == 1 {
            i1
        } else {
            i1 * self.full(1) + i2
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let (i1, i2) = self.multi(idx);
        if self.dim == 1 {
            vec![self.coord(0, i1)]
        } else {
            vec![self.coord(0, i1), self.coord(1, i2)]
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let (i1, i2) = self.multi(idx);
        let edge = |i: usize, axis: usize| i == 0 || i == self.n[axis] + 1;
        edge(i1, 0) || (self.dim == 2 && edge(i2, 1))
    }

    /// Storage index of unknown `k`.
    pub fn unknown_index(&self, k: usize) -> usize {
        if self.dim == 1 {
            k + 1
        } else {
            self.index(k / self.n[1] + 1, k % self.n[1] + 1)
        }
    }

    /// Unknown number of a storage index, `None` on the boundary layer.
    pub fn unknown_of(&self, idx: usize) -> Option<usize> {
        if self.is_boundary(idx) {
            return None;
        }
        let (i1, i2) = self.multi(idx);
        Some(if self.dim == 1 { i1 - 1 } else { (i1 - 1) * self.n[1] + (i2 - 1) })
    }

    /// Distance from a storage point to the boundary of the box.
    pub fn distance_to_boundary(&self, idx: usize) -> f64 {
        let p = self.point(idx);
        (0..self.dim).map(|k| (p[k] - self.lo[k]).min(self.hi[k] - p[k])).fold(f64::INFINITY, f64::min)
    }
}

/// Values on every point of a grid, boundary layer included.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: &Grid) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.len()] }
    }

    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self, OperatorError> {
        if values.len() != grid.len() {
            return Err(OperatorError::Shape(format!("{} values for a grid of {} points", values.len(), grid.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(OperatorError::Shape(format!("non-finite value at index {i}")));
        }
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self { grid: grid.clone(), values }
    }

    /// Boundary layer from `g`, interior from the unknown vector `u`.
    pub fn from_interior(grid: &Grid, u: &[f64], boundary: &[f64]) -> Self {
        let mut values = boundary.to_vec();
        for (k, v) in u.iter().enumerate() {
            values[grid.unknown_index(k)] = *v;
        }
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn interior(&self) -> Vec<f64> {
        (0..self.grid.unknowns()).map(|k| self.values[self.grid.unknown_index(k)]).collect()
    }

    /// Value at the grid point nearest to `x`.
    pub fn nearest(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let i: Vec<usize> = (0..g.dim)
            .map(|k| (((x[k] - g.lo[k]) / g.h[k]).round().max(0.0) as usize).min(g.n[k] + 1))
            .collect();
        self.values[g.index(i[0], i.get(1).copied().unwrap_or(0))]
    }

    /// Piecewise-linear interpolation along the first axis (1D only).
    pub fn interpolate_1d(&self, x: f64) -> f64 {
        let g = &self.grid;
        let s = ((x - g.lo[0]) / g.h[0]).clamp(0.0, (g.n[0] + 1) as f64);
        let i = (s.floor() as usize).min(g.n[0]);
        let w = s - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// CSV with header `x1[,x2],value`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), OperatorError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| OperatorError::Csv(e.to_string());
        let header: &[&str] = if self.grid.dim == 1 { &["x1", "value"] } else { &["x1", "x2", "value"] };
        w.write_record(header).map_err(err)?;
        for (i, v) in self.values.iter().enumerate() {
            let mut rec: Vec<String> = self.grid.point(i).iter().map(|x| format!("{x:.16e}")).collect();
            rec.push(format!("{v:.16e}"));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| OperatorError::Csv(e.to_string()))
    }

    /// Inverse of [`write_csv`](Self::write_csv); the grid is rebuilt from the coordinates.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, OperatorError> {
        let mut r = csv::Reader::from_reader(input);
        let err = |e: csv::Error| OperatorError::Csv(e.to_string());
        let header = r.headers().map_err(err)?.clone();
        let dim = match header.iter().collect::<Vec<_>>().as_slice() {
            ["x1", "value"] => 1,
            ["x1", "x2", "value"] => 2,
            other => return Err(OperatorError::Csv(format!("unexpected header {other:?}"))),
        };
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(err)?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| OperatorError::Csv(format!("`{s}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != dim + 1 {
                return Err(OperatorError::Csv(format!("row with {} fields", row.len())));
            }
            rows.push(row);
        }
        let axis_coords = |k: usize| {
            let mut c: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            c.sort_by(f64::total_cmp);
            c.dedup();
            c
        };
        let coords: Vec<Vec<f64>> = (0..dim).map(axis_coords).collect();
        let lo: Vec<f64> = coords.iter().map(|c| c[0]).collect();
        let hi: Vec<f64> = coords.iter().map(|c| *c.last().unwrap()).collect();
        let shape: Vec<usize> = coords.iter().map(|c| c.len().saturating_sub(2)).collect();
        let grid = Grid::new(&lo, &hi, &shape)?;
        if rows.len() != grid.len() {
            return Err(OperatorError::Csv(format!("{} rows for a {:?} grid", rows.len(), shape)));
        }
        let mut values = vec![0.0; grid.len()];
        for (i, row) in rows.iter().enumerate() {
            let p = grid.point(i);
            if p.iter().zip(row).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + a.abs())) {
                return Err(OperatorError::Csv(format!("row {i} is out of grid order")));
            }
            values[i] = row[dim];
        }
        GridFunction::new(&grid, values)
    }
}

/// A coefficient given either as a number or as expression text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefSpec {
    Number(f64),
    Text(String),
}

impl CoefSpec {
    fn parse(&self, name: &str) -> Result<Expression, OperatorError> {
        match self {
            CoefSpec::Number(v) => Ok(Expression::constant(*v)),
            CoefSpec::Text(s) => {
                Expression::parse(s).map_err(|source| OperatorError::Expr { name: name.to_string(), source })
            }
        }
    }
}

impl From<&str> for CoefSpec {
    fn from(s: &str) -> Self {
        CoefSpec::Text(s.to_string())
    }
}

impl From<f64> for CoefSpec {
    fn from(v: f64) -> Self {
        CoefSpec::Number(v)
    }
}

/// One coefficient shared by all axes, or one per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisCoefs {
    PerAxis(Vec<CoefSpec>),
    Shared(CoefSpec),
}

fn zero_coef() -> CoefSpec {
    CoefSpec::Number(0.0)
}

fn zero_axes() -> AxisCoefs {
    AxisCoefs::Shared(zero_coef())
}

/// JSON form of the elliptic data. `domain` is one `[lo, hi]` pair per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub domain: Vec<[f64; 2]>,
    pub a: AxisCoefs,
    #[serde(default = "zero_axes")]
    pub b: AxisCoefs,
    pub c: CoefSpec,
    pub f: CoefSpec,
    #[serde(default = "zero_coef")]
    pub g: CoefSpec,
}

/// `-a D^2 u + b.Du + c u = f` in the box, `u = g` on its boundary.
#[derive(Debug, Clone)]
pub struct EllipticProblem {
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    a: Vec<Expression>,
    b: Vec<Expression>,
    c: Expression,
    f: Expression,
    g: Expression,
}

impl EllipticProblem {
    pub fn from_spec(spec: &ProblemSpec) -> Result<Self, OperatorError> {
        let dim = spec.domain.len();
        if !(dim == 1 || dim == 2) {
            return Err(OperatorError::Grid(format!("domain must have 1 or 2 axes, got {dim}")));
        }
        let per_axis = |coefs: &AxisCoefs, name: &str| -> Result<Vec<Expression>, OperatorError> {
            let list: Vec<CoefSpec> = match coefs {
                AxisCoefs::Shared(c) => vec![c.clone(); dim],
                AxisCoefs::PerAxis(v) if v.len() == dim => v.clone(),
                AxisCoefs::PerAxis(v) => {
                    return Err(OperatorError::Shape(format!("`{name}` has {} entries for dimension {dim}", v.len())))
                }
            };
            list.iter().enumerate().map(|(k, c)| c.parse(&format!("{name}[{k}]"))).collect()
        };
        let p = Self {
            dim,
            lo: spec.domain.iter().map(|r| r[0]).collect(),
            hi: spec.domain.iter().map(|r| r[1]).collect(),
            a: per_axis(&spec.a, "a")?,
            b: per_axis(&spec.b, "b")?,
            c: spec.c.parse("c")?,
            f: spec.f.parse("f")?,
            g: spec.g.parse("g")?,
        };
        for (name, e) in p.named() {
            if e.arity() > dim {
                return Err(OperatorError::Expr {
                    name: name.clone(),
                    source: ExprError::MissingVariable { index: e.arity(), dim },
                });
            }
        }
        Ok(p)
    }

    /// Constant-coefficient problem on `domain`, mostly for tests and benchmarks.
    pub fn constant(domain: &[[f64; 2]], a: f64, b: f64, c: f64, f: f64) -> Result<Self, OperatorError> {
        Self::from_spec(&ProblemSpec {
            domain: domain.to_vec(),
            a: AxisCoefs::Shared(a.into()),
            b: AxisCoefs::Shared(b.into()),
            c: c.into(),
            f: f.into(),
            g: zero_coef(),
        })
    }

    fn named(&self) -> Vec<(String, &Expression)> {
        let mut out = Vec::new();
        for (k, e) in self.a.iter().enumerate() {
            out.push((format!("a[{k}]"), e));
        }
        for (k, e) in self.b.iter().enumerate() {
            out.push((format!("b[{k}]"), e));
        }
        out.push(("c".into(), &self.c));
        out.push(("f".into(), &self.f));
        out.push(("g".into(), &self.g));
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn grid(&self, shape: &[usize]) -> Result<Grid, OperatorError> {
        if shape.len() != self.dim {
            return Err(OperatorError::Shape(format!("shape {shape:?} for a {}-dimensional problem", self.dim)));
        }
        Grid::new(&self.lo, &self.hi, shape)
    }

    /// Same problem with a different source term.
    pub fn with_source(&self, f: Expression) -> Self {
        Self { f, ..self.clone() }
    }

    /// Same problem with different boundary data.
    pub fn with_boundary(&self, g: Expression) -> Self {
        Self { g, ..self.clone() }
    }

    pub fn diffusion(&self, axis: usize) -> &Expression {
        &self.a[axis]
    }

    pub fn drift(&self, axis: usize) -> &Expression {
        &self.b[axis]
    }

    pub fn reaction(&self) -> &Expression {
        &self.c
    }

    pub fn source(&self) -> &Expression {
        &self.f
    }

    pub fn boundary(&self) -> &Expression {
        &self.g
    }

    /// Samples `e` at every grid point.
    pub fn sample(&self, grid: &Grid, e: &Expression, name: &str) -> Result<Vec<f64>, OperatorError> {
        let wrap = |source| OperatorError::Expr { name: name.to_string(), source };
        if let Some(v) = e.constant_value() {
            return Ok(vec![v; grid.len()]);
        }
        (0..grid.len()).map(|i| e.eval(&grid.point(i)).map_err(wrap)).collect()
    }

    /// Empirical floors `(gamma, delta) = (min a, min c)` over the grid; also
    /// rejects a negative source.
    pub fn validate(&self, shape: &[usize]) -> Result<(f64, f64), OperatorError> {
        let grid = self.grid(shape)?;
        let argmin = |v: &[f64]| {
            v.iter()
                .enumerate()
                .fold((0usize, f64::INFINITY), |best, (i, x)| if *x < best.1 { (i, *x) } else { best })
        };
        let mut gamma = f64::INFINITY;
        let mut gamma_at = 0;
        for k in 0..self.dim {
            let (i, m) = argmin(&self.sample(&grid, &self.a[k], &format!("a[{k}]"))?);
            if m < gamma {
                gamma = m;
                gamma_at = i;
            }
        }
        if !(gamma > 0.0) {
            return Err(OperatorError::Ellipticity { min: gamma, at: grid.point(gamma_at) });
        }
        let (i, delta) = argmin(&self.sample(&grid, &self.c, "c")?);
        if !(delta > 0.0) {
            return Err(OperatorError::CFloor { min: delta, at: grid.point(i) });
        }
        let (i, fmin) = argmin(&self.sample(&grid, &self.f, "f")?);
        if fmin < 0.0 {
            return Err(OperatorError::NegativeSource { min: fmin, at: grid.point(i) });
        }
        self.sample(&grid, &self.g, "g")?;
        for k in 0..self.dim {
            self.sample(&grid, &self.b[k], &format!("b[{k}]"))?;
        }
        Ok((gamma, delta))
    }

    /// Validates and assembles the discrete operator on `shape`.
    pub fn assemble(&self, shape: &[usize]) -> Result<DiscreteOperator, OperatorError> {
        let (gamma, delta) = self.validate(shape)?;
        let grid = self.grid(shape)?;
        let a: Vec<Vec<f64>> =
            (0..self.dim).map(|k| self.sample(&grid, &self.a[k], "a")).collect::<Result<_, _>>()?;
        let b: Vec<Vec<f64>> =
            (0..self.dim).map(|k| self.sample(&grid, &self.b[k], "b")).collect::<Result<_, _>>()?;
        let c = self.sample(&grid, &self.c, "c")?;
        let f = self.sample(&grid, &self.f, "f")?;
        let g = self.sample(&grid, &self.g, "g")?;

        for k in 0..self.dim {
            let amin = a[k].iter().copied().fold(f64::INFINITY, f64::min);
            let bmax = b[k].iter().map(|v| v.abs()).fold(0.0, f64::max);
            if bmax > 0.0 {
                let h_max = 2.0 * amin / bmax;
                if grid.h(k) > h_max {
                    return Err(OperatorError::Monotonicity { axis: k, h: grid.h(k), h_max });
                }
            }
        }

        let n = grid.unknowns();
        let band = grid.unknown_stride(0);
        let mut m = BandMatrix::zeros(n, band, band);
        let mut bc = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for row in 0..n {
            let idx = grid.unknown_index(row);
            let mut diag = c[idx];
            for k in 0..self.dim {
                let h = grid.h(k);
                let (ak, bk) = (a[k][idx], b[k][idx]);
                diag += 2.0 * ak / (h * h) + bk.abs() / h;
                let minus = -ak / (h * h) - bk.max(0.0) / h;
                let plus = -ak / (h * h) - (-bk).max(0.0) / h;
                let s = grid.stride(k);
                for (nb, coef) in [(idx - s, minus), (idx + s, plus)] {
                    match grid.unknown_of(nb) {
                        Some(col) => m.add(row, col, coef),
                        None => bc[row] += coef * g[nb],
                    }
                }
            }
            m.add(row, row, diag);
            rhs[row] = f[idx];
        }
        let op = DiscreteOperator { grid, matrix: m, boundary: bc, source: rhs, boundary_values: g, gamma, delta };
        op.check_m_matrix()?;
        Ok(op)
    }
}

/// `A_h u + bc` realizes `L u` at the interior points.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Grid,
    matrix: BandMatrix,
    boundary: Vec<f64>,
    source: Vec<f64>,
    boundary_values: Vec<f64>,
    gamma: f64,
    delta: f64,
}

impl DiscreteOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &BandMatrix {
        &self.matrix
    }

    /// Contribution of the Dirichlet data to each interior row.
    pub fn boundary_contribution(&self) -> &[f64] {
        &self.boundary
    }

    /// `f` at the interior points.
    pub fn source(&self) -> &[f64] {
        &self.source
    }

    /// `g` sampled on the full grid (only the boundary layer is meaningful).
    pub fn boundary_values(&self) -> &[f64] {
        &self.boundary_values
    }

    pub fn floors(&self) -> (f64, f64) {
        (self.gamma, self.delta)
    }

    fn check_m_matrix(&self) -> Result<(), OperatorError> {
        let n = self.grid.unknowns();
        let (kl, ku) = self.matrix.bandwidths();
        for i in 0..n {
            let d = self.matrix.get(i, i);
            let mut off = 0.0;
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                if j != i {
                    let v = self.matrix.get(i, j);
                    if v > 0.0 {
                        return Err(OperatorError::NotMMatrix { row: i });
                    }
                    off -= v;
                }
            }
            if !(d > 0.0) || d < off {
                return Err(OperatorError::NotMMatrix { row: i });
            }
        }
        Ok(())
    }

    /// `A_h u + bc` on an unknown vector.
    pub fn apply_interior(&self, u: &[f64]) -> Vec<f64> {
        let mut r = self.matrix.matvec(u);
        for (ri, bi) in r.iter_mut().zip(&self.boundary) {
            *ri += bi;
        }
        r
    }

    /// Discrete `Lu` at interior points, zero on the boundary layer. The boundary
    /// layer of `u` is ignored in favor of the operator's Dirichlet data.
    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction, OperatorError> {
        if u.grid() != &self.grid {
            return Err(OperatorError::Shape("grid function and operator grids differ".into()));
        }
        let r = self.apply_interior(&u.interior());
        Ok(GridFunction::from_interior(&self.grid, &r, &vec![0.0; self.grid.len()]))
    }

    /// Grid function with interior `u` and boundary layer `g`.
    pub fn extend(&self, u: &[f64]) -> GridFunction {
        GridFunction::from_interior(&self.grid, u, &self.boundary_values)
    }
}

/// Central-difference gradient at each interior point, in unknown order.
pub fn gradient(u: &GridFunction) -> Vec<Vec2> {
    let g = u.grid();
    let v = u.values();
    (0..g.unknowns())
        .map(|k| {
            let idx = g.unknown_index(k);
            let mut p = Vec2::zeros();
            for axis in 0..g.dim() {
                let s = g.stride(axis);
                p[axis] = (v[idx + s] - v[idx - s]) / (2.0 * g.h(axis));
            }
            p
        })
        .collect()
}

/// `(u(x + h e) - 2u(x) + u(x - h e))/h^2` along `axis`, in unknown order.
pub fn second_difference(u: &GridFunction, axis: usize) -> Vec<f64> {
    let g = u.grid();
    let v = u.values();
    let s = g.stride(axis);
    let h2 = g.h(axis) * g.h(axis);
    (0..g.unknowns())
        .map(|k| {
            let idx = g.unknown_index(k);
            (v[idx + s] - 2.0 * v[idx] + v[idx - s]) / h2
        })
        .collect()
}
