//! Geometry of `ES_m`, the slice of the probability simplex by the sphere
//! `‖x‖² = 1/r`, and of the product manifold `ES_m^n`.
//!
//! Every point of `ES_m` has coordinate sum 1, so it lies in the affine
//! hyperplane through the centroid `c = (1/m)·1`. Since `‖x‖² = ‖c‖² + ‖x − c‖²`,
//! `ES_m` is a sphere of radius `sqrt(1/r − 1/m)` about `c` inside that
//! hyperplane. The normal space at `x` is `span{1, x}`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::seed;

/// Tolerance on the coordinate sum of a column.
pub const SUM_TOL: f64 = 1e-12;
/// Tolerance on the squared Euclidean norm of a column.
pub const NORM_TOL: f64 = 1e-10;
/// Entries below this are counted as negative by diagnostics.
pub const NEG_TOL: f64 = -1e-9;

const MAX_HALVINGS: usize = 60;

/// A point of `ES_m`.
///
/// Nonnegativity is not enforced: iterates may leave the open simplex slightly
/// (see [`RelaxedColumn::min_entry`]). The binarisation step is unaffected.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedColumn {
    values: Vec<f64>,
    r: usize,
}

impl RelaxedColumn {
    /// Validates sum and norm constraints.
    pub fn new(values: Vec<f64>, r: usize) -> Result<Self> {
        check_weight(values.len(), r)?;
        let col = Self { values, r };
        let sum_err = (col.sum() - 1.0).abs();
        if sum_err >= SUM_TOL {
            return Err(Error::OffManifold(format!("coordinate sum off by {sum_err:e}")));
        }
        let norm_err = (col.norm_sq() - 1.0 / r as f64).abs();
        if norm_err >= NORM_TOL {
            return Err(Error::OffManifold(format!("squared norm off by {norm_err:e}")));
        }
        Ok(col)
    }

    /// The scaled indicator `1_S / r` of an `r`-subset `S`; a point of `ES_m`.
    pub fn indicator(m: usize, support: &[usize]) -> Result<Self> {
        let r = support.len();
        check_weight(m, r)?;
        let mut values = vec![0.0; m];
        for &i in support {
            if i >= m || values[i] != 0.0 {
                return Err(Error::Shape(format!("bad support index {i}")));
            }
            values[i] = 1.0 / r as f64;
        }
        Self::new(values, r)
    }

    pub(crate) fn from_parts_unchecked(values: Vec<f64>, r: usize) -> Self {
        Self { values, r }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.values, &self.values)
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Scales every entry by `factor`; the result is generally off the manifold
    /// and is returned as a plain vector.
    pub fn scaled(&self, factor: f64) -> Vec<f64> {
        self.values.iter().map(|v| v * factor).collect()
    }
}

/// A point of the product manifold `ES_m^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedMatrix {
    columns: Vec<RelaxedColumn>,
    m: usize,
    r: usize,
}

impl RelaxedMatrix {
    pub fn new(columns: Vec<RelaxedColumn>) -> Result<Self> {
        let first = columns.first().ok_or(Error::EmptyInput)?;
        let (m, r) = (first.m(), first.r());
        if let Some(bad) = columns.iter().find(|c| c.m() != m || c.r() != r) {
            return Err(Error::Shape(format!(
                "mixed column shapes: (m={m}, r={r}) vs (m={}, r={})",
                bad.m(),
                bad.r()
            )));
        }
        Ok(Self { columns, m, r })
    }

    pub fn columns(&self) -> &[RelaxedColumn] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &RelaxedColumn {
        &self.columns[j]
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.columns.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.columns.iter().map(RelaxedColumn::norm_sq).sum()
    }

    pub fn min_entry(&self) -> f64 {
        self.columns
            .iter()
            .map(RelaxedColumn::min_entry)
            .fold(f64::INFINITY, f64::min)
    }

    /// Column-major copy of all entries.
    pub fn to_column_major(&self) -> Vec<f64> {
        self.columns.iter().flat_map(|c| c.values.iter().copied()).collect()
    }

    /// Checks every manifold invariant; used by tests and diagnostics.
    pub fn check_invariants(&self) -> Result<()> {
        let inv_r = 1.0 / self.r as f64;
        for (j, c) in self.columns.iter().enumerate() {
            let s = (c.sum() - 1.0).abs();
            let q = (c.norm_sq() - inv_r).abs();
            if s >= SUM_TOL || q >= NORM_TOL {
                return Err(Error::OffManifold(format!(
                    "column {j}: sum err {s:e}, norm err {q:e}"
                )));
            }
        }
        let n = self.n() as f64;
        let f = (self.frobenius_sq() - n * inv_r).abs();
        if f >= n * NORM_TOL {
            return Err(Error::OffManifold(format!("frobenius err {f:e}")));
        }
        Ok(())
    }
}

/// A tangent vector at some point of `ES_m`: orthogonal to `1` and to the point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_weight(m: usize, r: usize) -> Result<()> {
    if r == 0 || r >= m {
        return Err(Error::InvalidWeight { m, r });
    }
    Ok(())
}

fn remove_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|e| *e -= mean);
}

/// Orthogonal projection of an ambient vector onto the tangent space at `x`.
pub fn project_to_tangent(x: &RelaxedColumn, g: &[f64]) -> Result<TangentVector> {
    if g.len() != x.m() {
        return Err(Error::Shape(format!("gradient length {} vs m={}", g.len(), x.m())));
    }
    // Orthonormal basis of the normal space: 1/sqrt(m) and the unit vector
    // along the centred point.
    let mut u = x.values.clone();
    remove_mean(&mut u);
    let u_norm = dot(&u, &u).sqrt();
    if !(u_norm > 1e-12) {
        return Err(Error::DegeneratePoint);
    }
    u.iter_mut().for_each(|e| *e /= u_norm);

    let mut out = g.to_vec();
    // Two passes keep both orthogonality residuals at round-off level.
    for _ in 0..2 {
        remove_mean(&mut out);
        let a = dot(&out, &u);
        out.iter_mut().zip(&u).for_each(|(o, ui)| *o -= a * ui);
    }
    Ok(TangentVector(out))
}

/// Rescales `x + step` about the simplex centroid back onto the sphere slice.
/// Returns `None` when the stepped point collapses onto the centroid.
pub(crate) fn try_retract(x: &RelaxedColumn, step: &[f64]) -> Option<RelaxedColumn> {
    if step.iter().all(|&s| s == 0.0) {
        return Some(x.clone());
    }
    let m = x.m();
    let c = 1.0 / m as f64;
    let mut d: Vec<f64> = x.values.iter().zip(step).map(|(a, b)| a + b - c).collect();
    remove_mean(&mut d);
    let d_sq = dot(&d, &d);
    let radius_sq = 1.0 / x.r as f64 - c;
    if !d_sq.is_finite() || d_sq <= radius_sq * 1e-28 {
        return None;
    }
    let t = (radius_sq / d_sq).sqrt();
    let values = d.into_iter().map(|e| c + t * e).collect();
    Some(RelaxedColumn::from_parts_unchecked(values, x.r))
}

/// Retraction `R_x(ξ) = c + t·(x + ξ − c)` with `t > 0` restoring `‖·‖² = 1/r`.
///
/// Coordinate sums are preserved exactly (up to round-off) since `ξ ⊥ 1`. If the
/// stepped point collapses onto the centroid the step is halved, up to 60 times.
pub fn retract(x: &RelaxedColumn, xi: &TangentVector) -> Result<RelaxedColumn> {
    if xi.0.len() != x.m() {
        return Err(Error::Shape(format!("tangent length {} vs m={}", xi.0.len(), x.m())));
    }
    let mut step = xi.0.clone();
    for _ in 0..=MAX_HALVINGS {
        if let Some(col) = try_retract(x, &step) {
            return Ok(col);
        }
        step.iter_mut().for_each(|s| *s *= 0.5);
    }
    Err(Error::RetractionFailure(MAX_HALVINGS))
}

/// Random strictly positive point of `ES_m` (a random vertex when `r = 1`).
///
/// A heavy-tailed positive vector on the simplex is drawn until it lies at
/// least as far from the centroid as the sphere slice; shrinking it towards the
/// centroid then keeps every entry positive.
pub fn random_point(m: usize, r: usize, seed: u64) -> Result<RelaxedColumn> {
    check_weight(m, r)?;
    let mut rng = seed::rng(seed);
    if r == 1 {
        // The sphere slice meets the closed simplex only at its vertices.
        let i = rng.random_range(0..m);
        let mut values = vec![0.0; m];
        values[i] = 1.0;
        return Ok(RelaxedColumn::from_parts_unchecked(values, 1));
    }
    let c = 1.0 / m as f64;
    let radius_sq = 1.0 / r as f64 - c;
    let mut power = 2.0f64;
    let mut attempts = 0usize;
    loop {
        let mut w: Vec<f64> = (0..m)
            .map(|_| {
                let e: f64 = Exp1.sample(&mut rng);
                // Uniform jitter avoids exact zeros from underflow.
                e.powf(power) + 1e-12 * rng.random::<f64>()
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let mut d: Vec<f64> = w.iter().map(|v| v - c).collect();
        remove_mean(&mut d);
        let d_sq = dot(&d, &d);
        if d_sq >= radius_sq {
            let t = (radius_sq / d_sq).sqrt();
            let values = d.into_iter().map(|e| c + t * e).collect();
            return Ok(RelaxedColumn::from_parts_unchecked(values, r));
        }
        attempts += 1;
        if attempts.is_multiple_of(16) {
            power *= 2.0;
        }
    }
}

/// `n` independent random columns; column `j` is seeded with `seed ^ (j + 1)`.
pub fn random_matrix(m: usize, n: usize, r: usize, seed: u64) -> Result<RelaxedMatrix> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let columns = (0..n)
        .map(|j| random_point(m, r, seed ^ (j as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    RelaxedMatrix::new(columns)
}
