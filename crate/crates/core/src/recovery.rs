//! Sparse recovery benchmark: k-sparse signal synthesis, noisy measurement,
//! orthogonal matching pursuit, and recovery statistics over a (k, SNR) grid.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binary::BinaryMatrix;
use crate::error::{Error, Result};
use crate::seed;

/// Output SNR reported for exact reconstructions.
pub const SNR_CAP_DB: f64 = 300.0;
/// A trial succeeds when `‖x − x̂‖ / ‖x‖` is below this.
pub const SUCCESS_REL_ERR: f64 = 1e-4;
/// OMP stops once the residual norm falls below this.
pub const OMP_RESIDUAL_TOL: f64 = 1e-12;

/// Column access needed by OMP and measurement.
pub trait SensingOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn column_dot(&self, j: usize, v: &[f64]) -> f64;
    fn column_norm(&self, j: usize) -> f64;
    fn column(&self, j: usize) -> Vec<f64>;
}

impl SensingOperator for BinaryMatrix {
    fn nrows(&self) -> usize {
        self.m()
    }

    fn ncols(&self) -> usize {
        self.n()
    }

    fn column_dot(&self, j: usize, v: &[f64]) -> f64 {
        self.support(j).iter().map(|&i| v[i]).sum()
    }

    fn column_norm(&self, _j: usize) -> f64 {
        (self.r() as f64).sqrt()
    }

    fn column(&self, j: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.m()];
        self.support(j).iter().for_each(|&i| c[i] = 1.0);
        c
    }
}

impl SensingOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        DMatrix::nrows(self)
    }

    fn ncols(&self) -> usize {
        DMatrix::ncols(self)
    }

    fn column_dot(&self, j: usize, v: &[f64]) -> f64 {
        self.column(j).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    fn column_norm(&self, j: usize) -> f64 {
        DMatrix::column(self, j).norm()
    }

    fn column(&self, j: usize) -> Vec<f64> {
        DMatrix::column(self, j).iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSignal {
    values: Vec<f64>,
    support: Vec<usize>,
}

impl SparseSignal {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn k(&self) -> usize {
        self.support.len()
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }
}

/// Uniform random `k`-subset support with standard normal values.
pub fn gen_sparse_signal(n: usize, k: usize, seed: u64) -> Result<SparseSignal> {
    if k > n {
        return Err(Error::InvalidSparsity { n, k });
    }
    let mut rng = seed::rng(seed);
    let mut support = index::sample(&mut rng, n, k).into_vec();
    support.sort_unstable();
    let mut values = vec![0.0; n];
    for &j in &support {
        // A standard normal draw is zero with probability zero, but keep the
        // support exact regardless.
        let mut v: f64 = StandardNormal.sample(&mut rng);
        while v == 0.0 {
            v = StandardNormal.sample(&mut rng);
        }
        values[j] = v;
    }
    Ok(SparseSignal { values, support })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `y = Ax + w`. `Ax` is accumulated by index summation only. The noise is
/// white Gaussian rescaled per realisation so that `10·log10(‖Ax‖²/‖w‖²)` equals
/// `input_snr_db` exactly; an infinite SNR means no noise.
pub fn measure(a: &BinaryMatrix, x: &SparseSignal, input_snr_db: f64, noise_seed: u64) -> Result<Vec<f64>> {
    if x.n() != a.n() {
        return Err(Error::Shape(format!("signal length {} vs {} columns", x.n(), a.n())));
    }
    if input_snr_db.is_nan() {
        return Err(Error::Config("input SNR is NaN".into()));
    }
    let mut y = vec![0.0; a.m()];
    for &j in x.support() {
        let v = x.values[j];
        for &i in a.support(j) {
            y[i] += v;
        }
    }
    if input_snr_db == f64::INFINITY {
        return Ok(y);
    }
    let signal_norm = norm(&y);
    if signal_norm == 0.0 {
        return Err(Error::DegenerateSnr);
    }
    let mut rng = seed::rng(noise_seed);
    let w: Vec<f64> = (0..a.m()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let scale = signal_norm / (norm(&w) * 10f64.powf(input_snr_db / 20.0));
    y.iter_mut().zip(&w).for_each(|(yi, wi)| *yi += scale * wi);
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpResult {
    pub estimate: Vec<f64>,
    /// Selected columns in selection order.
    pub active: Vec<usize>,
    /// Residual norm before the first and after every accepted selection.
    pub residual_norms: Vec<f64>,
    /// A selected column was numerically dependent on the active set and was dropped.
    pub singular: bool,
}

/// Orthogonal matching pursuit with at most `k` selections.
///
/// The active set is kept as an orthonormal basis (modified Gram–Schmidt with
/// one re-orthogonalisation pass) plus the triangular factor, so the
/// least-squares refit is a back substitution.
pub fn omp<A: SensingOperator + ?Sized>(a: &A, y: &[f64], k: usize) -> Result<OmpResult> {
    let (m, n) = (a.nrows(), a.ncols());
    if y.len() != m {
        return Err(Error::Shape(format!("measurement length {} vs {m} rows", y.len())));
    }
    if k > m || k > n {
        return Err(Error::InvalidSparsity { n: m.min(n), k });
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column_norm(j)).collect();
    if let Some(j) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroColumn(j));
    }

    let mut residual = y.to_vec();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut rfac: Vec<Vec<f64>> = Vec::with_capacity(k); // column t holds R[0..=t, t]
    let mut active: Vec<usize> = Vec::with_capacity(k);
    let mut in_active = vec![false; n];
    let mut residual_norms = vec![norm(&residual)];
    let mut singular = false;

    for _ in 0..k {
        if *residual_norms.last().unwrap() < OMP_RESIDUAL_TOL {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if in_active[j] {
                continue;
            }
            let c = a.column_dot(j, &residual).abs() / norms[j];
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((j, c));
            }
        }
        let Some((j, _)) = best else { break };

        let col = a.column(j);
        let mut v = col.clone();
        let mut coeffs = vec![0.0; q.len()];
        for _ in 0..2 {
            for (t, qt) in q.iter().enumerate() {
                let h: f64 = qt.iter().zip(&v).map(|(x, y)| x * y).sum();
                coeffs[t] += h;
                v.iter_mut().zip(qt).for_each(|(vi, qi)| *vi -= h * qi);
            }
        }
        let vn = norm(&v);
        if vn <= 1e-10 * norms[j] {
            singular = true;
            break;
        }
        v.iter_mut().for_each(|e| *e /= vn);
        coeffs.push(vn);
        let h: f64 = v.iter().zip(&residual).map(|(x, y)| x * y).sum();
        residual.iter_mut().zip(&v).for_each(|(ri, qi)| *ri -= h * qi);
        q.push(v);
        rfac.push(coeffs);
        active.push(j);
        in_active[j] = true;
        residual_norms.push(norm(&residual));
    }

    // Solve R c = Qᵀ y.
    let z: Vec<f64> = q.iter().map(|qt| qt.iter().zip(y).map(|(a, b)| a * b).sum()).collect();
    let s = active.len();
    let mut c = vec![0.0; s];
    for row in (0..s).rev() {
        let mut acc = z[row];
        for col in row + 1..s {
            acc -= rfac[col][row] * c[col];
        }
        c[row] = acc / rfac[row][row];
    }
    let mut estimate = vec![0.0; n];
    for (&j, &cj) in active.iter().zip(&c) {
        estimate[j] = cj;
    }
    Ok(OmpResult { estimate, active, residual_norms, singular })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub success: bool,
    pub output_snr_db: f64,
    pub residual_norm: f64,
    pub relative_error: f64,
    pub singular: bool,
    /// The trial raised an error and was scored as a failed reconstruction.
    pub failed: bool,
}

/// `20·log10(‖x‖ / ‖x − x̂‖)`, capped at [`SNR_CAP_DB`].
pub fn output_snr_db(x: &[f64], estimate: &[f64]) -> f64 {
    let err: Vec<f64> = x.iter().zip(estimate).map(|(a, b)| a - b).collect();
    let (xn, en) = (norm(x), norm(&err));
    if en == 0.0 {
        return SNR_CAP_DB;
    }
    (20.0 * (xn / en).log10()).min(SNR_CAP_DB)
}

fn run_trial(a: &BinaryMatrix, k: usize, snr: f64, signal_seed: u64, noise_seed: u64) -> Result<TrialResult> {
    let x = gen_sparse_signal(a.n(), k, signal_seed)?;
    // A zero signal has no power to reference the noise level against.
    let snr = if k == 0 { f64::INFINITY } else { snr };
    let y = measure(a, &x, snr, noise_seed)?;
    let out = omp(a, &y, k)?;
    let err: Vec<f64> = x.values().iter().zip(&out.estimate).map(|(p, q)| p - q).collect();
    let xn = norm(x.values());
    let relative_error = if xn == 0.0 { norm(&err) } else { norm(&err) / xn };
    Ok(TrialResult {
        success: relative_error < SUCCESS_REL_ERR,
        output_snr_db: output_snr_db(x.values(), &out.estimate),
        residual_norm: *out.residual_norms.last().unwrap(),
        relative_error,
        singular: out.singular,
        failed: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCell {
    pub k: usize,
    pub input_snr_db: f64,
    pub trials: usize,
    pub successes: usize,
    pub recovery_pct: f64,
    pub mean_output_snr_db: f64,
    pub failed_trials: usize,
}

impl RecoveryCell {
    /// Order-independent aggregation of per-trial results.
    pub fn aggregate(k: usize, input_snr_db: f64, results: &[TrialResult]) -> Self {
        let trials = results.len();
        let successes = results.iter().filter(|t| t.success).count();
        let mut snrs: Vec<f64> = results.iter().map(|t| t.output_snr_db).collect();
        snrs.sort_by(f64::total_cmp);
        Self {
            k,
            input_snr_db,
            trials,
            successes,
            recovery_pct: 100.0 * successes as f64 / trials as f64,
            mean_output_snr_db: snrs.iter().sum::<f64>() / trials as f64,
            failed_trials: results.iter().filter(|t| t.failed).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub matrix_id: String,
    pub seed: u64,
    /// Grid cells, `k` major and SNR minor.
    pub cells: Vec<RecoveryCell>,
}

impl RecoveryReport {
    pub const CSV_HEADER: &'static str = "matrix_id,k,input_snr_db,trials,recovery_pct,mean_output_snr_db";

    pub fn cell(&self, k: usize, input_snr_db: f64) -> Option<&RecoveryCell> {
        self.cells
            .iter()
            .find(|c| c.k == k && c.input_snr_db.total_cmp(&input_snr_db).is_eq())
    }

    pub fn write_csv_rows<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{:.16e},{},{:.16e},{:.16e}",
                self.matrix_id, c.k, c.input_snr_db, c.trials, c.recovery_pct, c.mean_output_snr_db
            )?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        self.write_csv_rows(w)
    }
}

/// Seeds of trial `trial` in cell `(k, snr)`: (signal, noise).
pub fn trial_seeds(seed: u64, k: usize, input_snr_db: f64, trial: usize) -> (u64, u64) {
    let base = [seed, k as u64, input_snr_db.to_bits(), trial as u64];
    let mut sig = base.to_vec();
    sig.push(0);
    let mut noise = base.to_vec();
    noise.push(1);
    (seed::derive(&sig), seed::derive(&noise))
}

/// Runs `trials` independent trials per grid cell. OMP is given the true `k`.
pub fn run_experiment(
    a: &BinaryMatrix,
    matrix_id: &str,
    k_range: &[usize],
    input_snr_list: &[f64],
    trials: usize,
    seed: u64,
) -> Result<RecoveryReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be positive".into()));
    }
    if let Some(&k) = k_range.iter().find(|&&k| k > a.m() || k > a.n()) {
        return Err(Error::InvalidSparsity { n: a.m().min(a.n()), k });
    }
    if input_snr_list.iter().any(|s| s.is_nan()) {
        return Err(Error::Config("input SNR list contains NaN".into()));
    }
    let mut cells = Vec::with_capacity(k_range.len() * input_snr_list.len());
    for &k in k_range {
        for &snr in input_snr_list {
            let results: Vec<TrialResult> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let (s_seed, n_seed) = trial_seeds(seed, k, snr, t);
                    run_trial(a, k, snr, s_seed, n_seed).unwrap_or_else(|e| {
                        log::warn!("trial failed (k={k}, snr={snr}, trial={t}): {e}");
                        TrialResult {
                            success: false,
                            output_snr_db: 0.0,
                            residual_norm: f64::NAN,
                            relative_error: 1.0,
                            singular: false,
                            failed: true,
                        }
                    })
                })
                .collect();
            cells.push(RecoveryCell::aggregate(k, snr, &results));
        }
    }
    Ok(RecoveryReport { matrix_id: matrix_id.to_string(), seed, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{devore_matrix, DeVoreParams};

    #[test]
    fn sparse_signal_edges() {
        let z = gen_sparse_signal(10, 0, 1).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0) && z.support().is_empty());
        let d = gen_sparse_signal(10, 10, 1).unwrap();
        assert!(d.values().iter().all(|&v| v != 0.0));
        assert_eq!(gen_sparse_signal(625, 6, 42).unwrap(), gen_sparse_signal(625, 6, 42).unwrap());
        assert_eq!(gen_sparse_signal(3, 4, 0), Err(Error::InvalidSparsity { n: 3, k: 4 }));
        let s = gen_sparse_signal(625, 6, 42).unwrap();
        assert_eq!(s.k(), 6);
        assert!(s.support().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn measure_edges() {
        let a = devore_matrix(DeVoreParams::new(3, 1).unwrap());
        let zero = gen_sparse_signal(a.n(), 0, 0).unwrap();
        assert_eq!(measure(&a, &zero, f64::INFINITY, 0).unwrap(), vec![0.0; 9]);
        assert_eq!(measure(&a, &zero, 20.0, 0), Err(Error::DegenerateSnr));

        let x = gen_sparse_signal(a.n(), 3, 5).unwrap();
        let clean = measure(&a, &x, f64::INFINITY, 0).unwrap();
        let dense = a.to_dense() * nalgebra::DVector::from_column_slice(x.values());
        for (c, d) in clean.iter().zip(dense.iter()) {
            assert!((c - d).abs() < 1e-14);
        }
        let noisy = measure(&a, &x, 35.0, 3).unwrap();
        let w: Vec<f64> = noisy.iter().zip(&clean).map(|(a, b)| a - b).collect();
        let snr = 10.0 * (norm(&clean).powi(2) / norm(&w).powi(2)).log10();
        assert!((snr - 35.0).abs() < 1e-9, "{snr}");

        let short = gen_sparse_signal(4, 1, 0).unwrap();
        assert!(matches!(measure(&a, &short, f64::INFINITY, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn omp_identity() {
        let a = DMatrix::<f64>::identity(4, 4);
        let out = omp(&a, &[0.0, 3.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(out.estimate, vec![0.0, 3.0, 0.0, 0.0]);
        let out = omp(&a, &[0.0, 3.0, 0.0, 0.0], 0).unwrap();
        assert_eq!(out.estimate, vec![0.0; 4]);
        assert!(omp(&a, &[0.0; 4], 5).is_err());
    }

    #[test]
    fn omp_devore_single_spike() {
        let a = devore_matrix(DeVoreParams::new(5, 3).unwrap());
        for seed in 0..100 {
            let x = gen_sparse_signal(a.n(), 1, seed).unwrap();
            let y = measure(&a, &x, f64::INFINITY, 0).unwrap();
            let out = omp(&a, &y, 1).unwrap();
            let err: f64 = norm(&x.values().iter().zip(&out.estimate).map(|(p, q)| p - q).collect::<Vec<_>>());
            assert!(err / norm(x.values()) < 1e-10);
        }
    }

    #[test]
    fn omp_invariants() {
        let a = devore_matrix(DeVoreParams::new(5, 2).unwrap());
        for seed in 0..30 {
            let x = gen_sparse_signal(a.n(), 8, seed).unwrap();
            let y = measure(&a, &x, 20.0, seed).unwrap();
            let out = omp(&a, &y, 8).unwrap();
            let mut sorted = out.active.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), out.active.len());
            assert!(out.active.len() <= 8);
            assert!(out.residual_norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn omp_flags_dependent_columns() {
        // y is outside the column space and column 1 = 2 * column 0.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 0.0]);
        let out = omp(&a, &[0.0, 1.0], 2).unwrap();
        assert_eq!(out.active, vec![0]);
        assert!(out.singular);
        assert_eq!(out.estimate, vec![0.0, 0.0]);
    }

    #[test]
    fn output_snr_definition() {
        let x = [1.0, -2.0];
        assert_eq!(output_snr_db(&x, &x), SNR_CAP_DB);
        assert_eq!(output_snr_db(&x, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn experiment_basics() {
        let a = devore_matrix(DeVoreParams::new(5, 3).unwrap());
        let rep = run_experiment(&a, "devore", &[0], &[f64::INFINITY, 10.0], 1, 3).unwrap();
        assert!(rep.cells.iter().all(|c| c.recovery_pct == 100.0));
        let rep = run_experiment(&a, "devore", &[1], &[f64::INFINITY], 200, 9).unwrap();
        assert_eq!(rep.cells[0].recovery_pct, 100.0);
        let again = run_experiment(&a, "devore", &[1], &[f64::INFINITY], 200, 9).unwrap();
        assert_eq!(rep, again);
        assert!(run_experiment(&a, "devore", &[26], &[f64::INFINITY], 1, 0).is_err());
    }

    #[test]
    fn aggregation_ignores_trial_order() {
        let a = devore_matrix(DeVoreParams::new(5, 2).unwrap());
        let mut results: Vec<TrialResult> = (0..50)
            .map(|t| {
                let (s, n) = trial_seeds(1, 4, 15.0, t);
                run_trial(&a, 4, 15.0, s, n).unwrap()
            })
            .collect();
        let forward = RecoveryCell::aggregate(4, 15.0, &results);
        results.reverse();
        results.swap(3, 17);
        assert_eq!(forward, RecoveryCell::aggregate(4, 15.0, &results));
    }

    #[test]
    fn report_csv_layout() {
        let a = devore_matrix(DeVoreParams::new(3, 1).unwrap());
        let rep = run_experiment(&a, "dv", &[1, 2], &[f64::INFINITY, 20.0], 3, 0).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RecoveryReport::CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("dv,1,inf,3,"));
        assert!(lines[2].starts_with("dv,1,2.0000000000000000e1,3,"));
        assert!(lines[3].starts_with("dv,2,inf,"));
    }
}
