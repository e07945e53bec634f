//! Smooth-max coherence objective
//!
//! ```text
//! f(B) = Σ_{i≠j} r²γ_ij · exp(α r²γ_ij) / Σ_{i≠j} exp(α r²γ_ij),   γ_ij = ⟨b_i, b_j⟩
//! ```
//!
//! summed over ordered pairs. All exponentials are shifted by the largest
//! exponent before evaluation. With `s_ij = exp(α r²γ_ij − M)`, `w_ij = s_ij / Σ s`
//! the Euclidean gradient is
//!
//! ```text
//! ∂f/∂b_l = Σ_{j≠l} 2·w_lj·r²·(1 + α(r²γ_lj − f))·b_j
//! ```

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifold::{project_to_tangent, RelaxedMatrix, TangentVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParams {
    /// Smooth-max sharpness applied to `r²γ`.
    pub alpha: f64,
    /// Column weight.
    pub r: usize,
}

impl ObjectiveParams {
    pub fn new(alpha: f64, r: usize) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        if r == 0 {
            return Err(Error::Config("r must be >= 1".into()));
        }
        Ok(Self { alpha, r })
    }
}

/// `M_α(x) = Σ x_i e^{αx_i} / Σ e^{αx_i}`, evaluated with a max shift.
pub fn smooth_max(x: &[f64], alpha: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let shift = x.iter().map(|v| alpha * v).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for &v in x {
        let s = (alpha * v - shift).exp();
        num += v * s;
        den += s;
    }
    Ok(num / den)
}

/// Pairwise inner products of the columns of `B` (full symmetric `n×n`).
#[derive(Debug, Clone, PartialEq)]
pub struct GramOffDiagonal {
    n: usize,
    gamma: Vec<f64>,
}

impl GramOffDiagonal {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.n + j]
    }

    /// Values `γ_ij` over ordered pairs `i ≠ j`, row-major.
    pub fn off_diagonal(&self) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect()
    }
}

/// `BᵀB` with the lower triangle copied from the upper, so `γ_ij == γ_ji`
/// bit for bit.
fn gram_raw(data: &[f64], m: usize, n: usize) -> Vec<f64> {
    let b = DMatrix::from_column_slice(m, n, data);
    let mut gamma = b.transpose() * &b;
    for j in 0..n {
        for i in j + 1..n {
            gamma[(i, j)] = gamma[(j, i)];
        }
    }
    gamma.data.into()
}

pub fn gram_offdiag(b: &RelaxedMatrix) -> GramOffDiagonal {
    let data = b.to_column_major();
    GramOffDiagonal { n: b.n(), gamma: gram_raw(&data, b.m(), b.n()) }
}

/// Shared state of one objective evaluation, reused by the gradient.
pub(crate) struct Evaluation {
    pub(crate) value: f64,
    gamma: Vec<f64>,
    shift: f64,
    denom: f64,
}

pub(crate) fn evaluate(data: &[f64], m: usize, n: usize, p: ObjectiveParams) -> Result<Evaluation> {
    if n < 2 {
        return Err(Error::TooFewColumns(n));
    }
    if data.len() != m * n {
        return Err(Error::Shape(format!("{} entries for {m}x{n}", data.len())));
    }
    let r2 = (p.r * p.r) as f64;
    let alpha = p.alpha;
    let gamma = gram_raw(data, m, n);
    // γ_ik for k > i.
    let upper = |i: usize| &gamma[i * n + i + 1..(i + 1) * n];

    let vmax = (0..n)
        .into_par_iter()
        .map(|i| upper(i).iter().map(|g| r2 * g).fold(f64::NEG_INFINITY, f64::max))
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let shift = alpha * vmax;

    // Each unordered pair stands for both ordered pairs; the factor 2 cancels
    // in the value but is kept in the denominator used by the gradient.
    // Per-column partials are folded in index order so the result does not
    // depend on the thread schedule.
    let partials: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for g in upper(i) {
                let v = r2 * g;
                let s = (alpha * v - shift).exp();
                num += v * s;
                den += s;
            }
            (num, den)
        })
        .collect();
    let (num, den) = partials
        .iter()
        .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    Ok(Evaluation { value: num / den, gamma, shift, denom: 2.0 * den })
}

/// Euclidean gradient as `B·C` with the symmetric pair-coefficient matrix
/// `C_lj = 2·w_lj·r²·(1 + α(r²γ_lj − f))`, `C_ll = 0`.
pub(crate) fn gradient_from(data: &[f64], m: usize, n: usize, p: ObjectiveParams, ev: &Evaluation) -> Vec<f64> {
    let r2 = (p.r * p.r) as f64;
    let mut coef = DMatrix::<f64>::zeros(n, n);
    coef.as_mut_slice().par_chunks_mut(n).enumerate().for_each(|(j, col)| {
        for (l, c) in col.iter_mut().enumerate() {
            if l == j {
                continue;
            }
            let g = ev.gamma[j * n + l];
            let v = r2 * g;
            let w = (p.alpha * v - ev.shift).exp() / ev.denom;
            *c = 2.0 * w * r2 * (1.0 + p.alpha * (v - ev.value));
        }
    });
    let b = DMatrix::from_column_slice(m, n, data);
    (b * coef).data.into()
}

/// Objective on an arbitrary column-major `m×n` matrix (not necessarily on the
/// manifold). Used for finite-difference checks.
pub fn objective_ambient(data: &[f64], m: usize, n: usize, p: ObjectiveParams) -> Result<f64> {
    evaluate(data, m, n, p).map(|e| e.value)
}

/// Euclidean gradient on an arbitrary column-major `m×n` matrix.
pub fn euclidean_gradient_ambient(
    data: &[f64],
    m: usize,
    n: usize,
    p: ObjectiveParams,
) -> Result<Vec<f64>> {
    let ev = evaluate(data, m, n, p)?;
    Ok(gradient_from(data, m, n, p, &ev))
}

pub fn objective(b: &RelaxedMatrix, p: ObjectiveParams) -> Result<f64> {
    objective_ambient(&b.to_column_major(), b.m(), b.n(), p)
}

pub fn euclidean_gradient(b: &RelaxedMatrix, p: ObjectiveParams) -> Result<DMatrix<f64>> {
    let g = euclidean_gradient_ambient(&b.to_column_major(), b.m(), b.n(), p)?;
    Ok(DMatrix::from_vec(b.m(), b.n(), g))
}

/// Objective value together with the Riemannian gradient, from one Gram pass.
pub(crate) fn value_and_riemannian_gradient(
    b: &RelaxedMatrix,
    p: ObjectiveParams,
) -> Result<(f64, Vec<TangentVector>)> {
    let data = b.to_column_major();
    let ev = evaluate(&data, b.m(), b.n(), p)?;
    let grad = riemannian_from(b, &data, p, &ev)?;
    Ok((ev.value, grad))
}

/// Riemannian gradient from an evaluation already computed at `b`.
pub(crate) fn riemannian_from(
    b: &RelaxedMatrix,
    data: &[f64],
    p: ObjectiveParams,
    ev: &Evaluation,
) -> Result<Vec<TangentVector>> {
    let m = b.m();
    let grad = gradient_from(data, m, b.n(), p, ev);
    b.columns()
        .iter()
        .zip(grad.chunks(m))
        .map(|(col, g)| project_to_tangent(col, g))
        .collect()
}

pub fn riemannian_gradient(b: &RelaxedMatrix, p: ObjectiveParams) -> Result<Vec<TangentVector>> {
    value_and_riemannian_gradient(b, p).map(|(_, g)| g)
}

/// Product-manifold Frobenius norm of a set of tangent vectors.
pub fn tangent_norm(xi: &[TangentVector]) -> f64 {
    xi.iter().map(TangentVector::norm_sq).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{random_matrix, retract, RelaxedColumn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(alpha: f64, r: usize) -> ObjectiveParams {
        ObjectiveParams::new(alpha, r).unwrap()
    }

    fn matrix_of(cols: Vec<RelaxedColumn>) -> RelaxedMatrix {
        RelaxedMatrix::new(cols).unwrap()
    }

    #[test]
    fn smooth_max_examples() {
        assert_eq!(smooth_max(&[0.3; 5], 7.0).unwrap(), 0.3);
        assert_eq!(smooth_max(&[0.0, 1.0], 0.0).unwrap(), 0.5);
        let want = 10f64.exp() / (1.0 + 10f64.exp());
        assert!((smooth_max(&[0.0, 1.0], 10.0).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.9999546).abs() < 1e-7);
        assert_eq!(smooth_max(&[], 1.0), Err(Error::EmptyInput));
    }

    #[test]
    fn smooth_max_survives_huge_exponents() {
        let x = [0.0, 1.0, 0.5];
        let v = smooth_max(&x, 1e4).unwrap();
        assert!(v.is_finite() && (v - 1.0).abs() < 1e-12);
        let v = smooth_max(&[-1.0, -0.5], 1e4).unwrap();
        assert!((v + 0.5).abs() < 1e-12);
    }

    #[test]
    fn gram_examples() {
        let a = RelaxedColumn::indicator(6, &[0, 1]).unwrap();
        let b = RelaxedColumn::indicator(6, &[2, 3]).unwrap();
        let g = gram_offdiag(&matrix_of(vec![a.clone(), a.clone()]));
        assert!((g.get(0, 1) - 0.5).abs() < 1e-15);
        let g = gram_offdiag(&matrix_of(vec![a, b]));
        assert_eq!(g.get(0, 1), 0.0);
    }

    #[test]
    fn gram_matches_double_loop() {
        let b = random_matrix(6, 4, 2, 5).unwrap();
        let g = gram_offdiag(&b);
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for k in 0..6 {
                    s += b.column(i).values()[k] * b.column(j).values()[k];
                }
                assert!((g.get(i, j) - s).abs() < 1e-14);
                assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
    }

    #[test]
    fn objective_simple_cases() {
        let a = RelaxedColumn::indicator(6, &[0, 1]).unwrap();
        let b = RelaxedColumn::indicator(6, &[2, 3]).unwrap();
        for alpha in [0.0, 1.0, 50.0] {
            let f = objective(&matrix_of(vec![a.clone(), a.clone()]), params(alpha, 2)).unwrap();
            assert!((f - 2.0).abs() < 1e-14);
            let f = objective(&matrix_of(vec![a.clone(), b.clone()]), params(alpha, 2)).unwrap();
            assert_eq!(f, 0.0);
        }
        let single = matrix_of(vec![a]);
        assert_eq!(objective(&single, params(1.0, 2)), Err(Error::TooFewColumns(1)));
    }

    #[test]
    fn objective_approaches_pairwise_max() {
        let b = random_matrix(8, 5, 3, 17).unwrap();
        let g = gram_offdiag(&b);
        let vals: Vec<f64> = g.off_diagonal().iter().map(|v| 9.0 * v).collect();
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let f: Vec<f64> = [1.0, 10.0, 100.0]
            .iter()
            .map(|&a| objective(&b, params(a, 3)).unwrap())
            .collect();
        assert!(f[0] <= f[1] && f[1] <= f[2] && f[2] <= max + 1e-15);
        assert!((f[2] - max).abs() < (f[1] - max).abs());
        for (a, fa) in [1.0, 10.0, 100.0].iter().zip(&f) {
            let sm = smooth_max(&vals, *a).unwrap();
            assert!((sm - fa).abs() < 1e-13 * fa.abs().max(1.0));
        }
    }

    #[test]
    fn objective_is_permutation_invariant() {
        let b = random_matrix(7, 6, 2, 3).unwrap();
        let mut cols = b.columns().to_vec();
        cols.reverse();
        cols.swap(1, 4);
        let p = params(30.0, 2);
        let f0 = objective(&b, p).unwrap();
        let f1 = objective(&matrix_of(cols), p).unwrap();
        assert!((f0 - f1).abs() < 1e-13 * f0);
    }

    #[test]
    fn stabilisation_matches_naive_when_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..20 {
            let b = random_matrix(9, 6, 3, trial).unwrap();
            let alpha = rng.random_range(0.0..20.0);
            let vals: Vec<f64> = gram_offdiag(&b).off_diagonal().iter().map(|v| 9.0 * v).collect();
            let num: f64 = vals.iter().map(|v| v * (alpha * v).exp()).sum();
            let den: f64 = vals.iter().map(|v| (alpha * v).exp()).sum();
            let naive = num / den;
            let f = objective(&b, params(alpha, 3)).unwrap();
            assert!((f - naive).abs() <= 1e-14 * naive.abs(), "{f} vs {naive}");
        }
    }

    #[test]
    fn gradient_identical_columns_alpha_zero() {
        let x = crate::manifold::random_point(5, 2, 9).unwrap();
        let b = matrix_of(vec![x.clone(), x.clone()]);
        let g = euclidean_gradient(&b, params(0.0, 2)).unwrap();
        for k in 0..5 {
            // Two ordered pairs, weight 1/2 each, factor 2: column l gets r²·b_other.
            assert!((g[(k, 0)] - 4.0 * x.values()[k]).abs() < 1e-14);
            assert!((g[(k, 1)] - 4.0 * x.values()[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_equal_weights_reduces_to_average() {
        let cols = vec![
            RelaxedColumn::indicator(6, &[0, 1]).unwrap(),
            RelaxedColumn::indicator(6, &[2, 3]).unwrap(),
            RelaxedColumn::indicator(6, &[4, 5]).unwrap(),
        ];
        let b = matrix_of(cols);
        let g = euclidean_gradient(&b, params(7.0, 2)).unwrap();
        let (n, r2) = (3.0, 4.0);
        for l in 0..3 {
            for k in 0..6 {
                let others: f64 = (0..3)
                    .filter(|&j| j != l)
                    .map(|j| b.column(j).values()[k])
                    .sum();
                let want = 2.0 * r2 / (n * (n - 1.0)) * others;
                assert!((g[(k, l)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let b = random_matrix(7, 4, 2, 23).unwrap();
        let p = params(5.0, 2);
        let data = b.to_column_major();
        let g = euclidean_gradient_ambient(&data, 7, 4, p).unwrap();
        let h = 1e-6;
        let mut fd = vec![0.0; data.len()];
        for idx in 0..data.len() {
            let mut up = data.clone();
            up[idx] += h;
            let mut dn = data.clone();
            dn[idx] -= h;
            fd[idx] = (objective_ambient(&up, 7, 4, p).unwrap()
                - objective_ambient(&dn, 7, 4, p).unwrap())
                / (2.0 * h);
        }
        let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let err = g.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(err / scale < 1e-6, "relative error {}", err / scale);
    }

    #[test]
    fn riemannian_gradient_vanishes_on_normal_space() {
        let x = crate::manifold::random_point(6, 2, 1).unwrap();
        let b = matrix_of(vec![x.clone(), x]);
        for t in riemannian_gradient(&b, params(3.0, 2)).unwrap() {
            assert!(t.values().iter().all(|v| v.abs() < 1e-13));
        }
    }

    #[test]
    fn riemannian_gradient_is_tangent() {
        let b = random_matrix(6, 3, 2, 77).unwrap();
        let g = riemannian_gradient(&b, params(10.0, 2)).unwrap();
        for (t, col) in g.iter().zip(b.columns()) {
            assert!(t.values().iter().sum::<f64>().abs() < 1e-12);
            let ip: f64 = t.values().iter().zip(col.values()).map(|(a, b)| a * b).sum();
            assert!(ip.abs() < 1e-12);
        }
    }

    #[test]
    fn riemannian_gradient_directional_derivative() {
        let b = random_matrix(6, 3, 2, 5).unwrap();
        let p = params(4.0, 2);
        let f0 = objective(&b, p).unwrap();
        let grad = riemannian_gradient(&b, p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let raw: Vec<TangentVector> = b
            .columns()
            .iter()
            .map(|c| {
                let g: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                project_to_tangent(c, &g).unwrap()
            })
            .collect();
        let scale = 1e-5 / tangent_norm(&raw);
        let eta: Vec<TangentVector> = raw.iter().map(|t| t.scaled(scale)).collect();
        let moved: Vec<RelaxedColumn> = b
            .columns()
            .iter()
            .zip(&eta)
            .map(|(c, t)| retract(c, t).unwrap())
            .collect();
        let f1 = objective(&matrix_of(moved), p).unwrap();
        let norm = tangent_norm(&eta);
        let predicted: f64 = grad
            .iter()
            .zip(&eta)
            .map(|(g, e)| g.values().iter().zip(e.values()).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
            / norm;
        let measured = (f1 - f0) / norm;
        assert!(
            (measured - predicted).abs() < 1e-3 * predicted.abs(),
            "{measured} vs {predicted}"
        );
    }
}
