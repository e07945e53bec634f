//! Binary column-regular matrices: binarisation of relaxed solutions, coherence
//! metrics, text serialisation and the end-to-end construction pipeline.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{random_matrix, RelaxedMatrix};
use crate::optimizer::{optimize, IterationTrace, OptimizeFailure, OptimizerConfig};
use crate::seed;

/// `m×n` matrix over {0, 1} with exactly `r` ones per column, stored as
/// sorted per-column supports.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMatrix {
    m: usize,
    r: usize,
    supports: Vec<Vec<usize>>,
}

impl BinaryMatrix {
    pub fn from_supports(m: usize, r: usize, supports: Vec<Vec<usize>>) -> Result<Self> {
        if r == 0 || r > m {
            return Err(Error::InvalidWeight { m, r });
        }
        for (j, s) in supports.iter().enumerate() {
            if s.len() != r {
                return Err(Error::Shape(format!("column {j} has weight {} != {r}", s.len())));
            }
            if s.windows(2).any(|w| w[0] >= w[1]) || s.last().is_some_and(|&i| i >= m) {
                return Err(Error::Shape(format!("column {j} support {s:?} is not a sorted subset of 0..{m}")));
            }
        }
        Ok(Self { m, r, supports })
    }

    /// Builds from dense rows; every column must have the same weight.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if m == 0 || n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("dense rows must form a non-empty rectangle".into()));
        }
        let supports: Vec<Vec<usize>> = (0..n)
            .map(|j| (0..m).filter(|&i| rows[i][j] != 0).collect())
            .collect();
        let r = supports[0].len();
        Self::from_supports(m, r, supports)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.supports.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn support(&self, j: usize) -> &[usize] {
        &self.supports[j]
    }

    pub fn supports(&self) -> &[Vec<usize>] {
        &self.supports
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        u8::from(self.supports[j].binary_search(&i).is_ok())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.m, self.n());
        for (j, s) in self.supports.iter().enumerate() {
            for &i in s {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    fn bitsets(&self) -> (usize, Vec<u64>) {
        let words = self.m.div_ceil(64);
        let mut bits = vec![0u64; words * self.n()];
        for (j, s) in self.supports.iter().enumerate() {
            for &i in s {
                bits[j * words + i / 64] |= 1 << (i % 64);
            }
        }
        (words, bits)
    }

    /// Number of rows shared by columns `i` and `j`.
    pub fn overlap(&self, i: usize, j: usize) -> usize {
        let (a, b) = (&self.supports[i], &self.supports[j]);
        let (mut p, mut q, mut count) = (0, 0, 0);
        while p < a.len() && q < b.len() {
            match a[p].cmp(&b[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    p += 1;
                    q += 1;
                }
            }
        }
        count
    }

    /// Largest pairwise overlap and the lexicographically first pair attaining it.
    pub fn max_overlap(&self) -> Option<(usize, (usize, usize))> {
        let n = self.n();
        if n < 2 {
            return None;
        }
        let (words, bits) = self.bitsets();
        let mut best = (0usize, (0usize, 1usize));
        let mut first = true;
        for i in 0..n {
            let bi = &bits[i * words..(i + 1) * words];
            for j in i + 1..n {
                let bj = &bits[j * words..(j + 1) * words];
                let ov: u32 = bi.iter().zip(bj).map(|(x, y)| (x & y).count_ones()).sum();
                if first || ov as usize > best.0 {
                    best = (ov as usize, (i, j));
                    first = false;
                }
            }
        }
        Some(best)
    }

    /// Pairs of identical columns.
    pub fn duplicate_columns(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| self.supports[a].cmp(&self.supports[b]).then(a.cmp(&b)));
        let mut dups = Vec::new();
        for w in order.windows(2) {
            if self.supports[w[0]] == self.supports[w[1]] {
                dups.push((w[0].min(w[1]), w[0].max(w[1])));
            }
        }
        dups.sort_unstable();
        dups
    }

    /// Exact coherence from integer overlaps: `μ = max overlap / r`.
    pub fn coherence_report(&self) -> Result<CoherenceReport> {
        let (t, pair) = self.max_overlap().ok_or(Error::TooFewColumns(self.n()))?;
        let r = self.r;
        let mu = t as f64 / r as f64;
        // k < r/t + 1  <=>  k·t < r + t
        let rip_order = (t > 0).then(|| r.div_ceil(t));
        Ok(CoherenceReport {
            coherence: mu,
            welch: welch_bound(self.m, self.n()),
            rip_order,
            rip_constant_bound: rip_order.map(|k| mu * (k as f64 - 1.0)),
            argmax_pair: pair,
            max_overlap: Some(t),
            m: self.m,
            n: self.n(),
        })
    }

    /// Dense text: `m n r` header then `m` rows of space-separated 0/1.
    pub fn to_dense_string(&self) -> String {
        let mut out = format!("{} {} {}\n", self.m, self.n(), self.r);
        for i in 0..self.m {
            let row: Vec<&str> = (0..self.n())
                .map(|j| if self.get(i, j) == 1 { "1" } else { "0" })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Sparse text: `m n r` header then one line per column listing its
    /// one-positions (0-based, ascending).
    pub fn to_sparse_string(&self) -> String {
        let mut out = format!("{} {} {}\n", self.m, self.n(), self.r);
        for s in &self.supports {
            let mut first = true;
            for i in s {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{i}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_dense<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_dense_string().as_bytes())
    }

    pub fn write_sparse<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_sparse_string().as_bytes())
    }

    pub fn parse_dense(text: &str) -> Result<Self> {
        let (m, n, r, body) = parse_header(text)?;
        if body.len() != m {
            return Err(Error::Parse { line: body.len() + 2, msg: format!("expected {m} rows, found {}", body.len()) });
        }
        let mut supports = vec![Vec::with_capacity(r); n];
        for (i, (line_no, line)) in body.iter().enumerate() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != n {
                return Err(Error::Parse { line: *line_no, msg: format!("expected {n} entries, found {}", toks.len()) });
            }
            for (j, t) in toks.iter().enumerate() {
                match *t {
                    "0" => {}
                    "1" => supports[j].push(i),
                    other => {
                        return Err(Error::Parse { line: *line_no, msg: format!("entry {other:?} is not 0 or 1") })
                    }
                }
            }
        }
        if let Some(j) = supports.iter().position(|s| s.len() != r) {
            return Err(Error::Parse { line: 1, msg: format!("column {j} has weight {} != {r}", supports[j].len()) });
        }
        Self::from_supports(m, r, supports).map_err(|e| Error::Parse { line: 1, msg: e.to_string() })
    }

    pub fn parse_sparse(text: &str) -> Result<Self> {
        let (m, n, r, body) = parse_header(text)?;
        if body.len() != n {
            return Err(Error::Parse { line: body.len() + 2, msg: format!("expected {n} columns, found {}", body.len()) });
        }
        let mut supports = Vec::with_capacity(n);
        for (line_no, line) in &body {
            let s = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse { line: *line_no, msg: e.to_string() })?;
            if s.len() != r {
                return Err(Error::Parse { line: *line_no, msg: format!("expected {r} positions, found {}", s.len()) });
            }
            if s.windows(2).any(|w| w[0] >= w[1]) || s.last().is_some_and(|&i| i >= m) {
                return Err(Error::Parse { line: *line_no, msg: format!("positions must be ascending and < {m}") });
            }
            supports.push(s);
        }
        Self::from_supports(m, r, supports).map_err(|e| Error::Parse { line: 1, msg: e.to_string() })
    }

    /// Detects dense vs sparse layout from the body shape.
    pub fn parse(text: &str) -> Result<Self> {
        let (m, n, _, body) = parse_header(text)?;
        let dense_shape = body.len() == m
            && body.iter().all(|(_, l)| {
                let t: Vec<&str> = l.split_whitespace().collect();
                t.len() == n && t.iter().all(|x| *x == "0" || *x == "1")
            });
        if dense_shape {
            if let Ok(a) = Self::parse_dense(text) {
                return Ok(a);
            }
        }
        if body.len() == n {
            return Self::parse_sparse(text);
        }
        Self::parse_dense(text)
    }
}

type Body<'a> = Vec<(usize, &'a str)>;

fn parse_header(text: &str) -> Result<(usize, usize, usize, Body<'_>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (line, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
    let dims = header
        .split_whitespace()
        .map(str::parse::<usize>)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse { line, msg: format!("bad header: {e}") })?;
    let [m, n, r] = dims[..] else {
        return Err(Error::Parse { line, msg: "header must be `m n r`".into() });
    };
    if m == 0 || n == 0 || r == 0 || r > m {
        return Err(Error::Parse { line, msg: format!("invalid dimensions m={m} n={n} r={r}") });
    }
    Ok((m, n, r, lines.collect()))
}

/// Coherence of a matrix together with the derived Welch and RIP quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub coherence: f64,
    pub welch: f64,
    /// Largest `k` with `k < 1/μ + 1`; `None` when `μ = 0`.
    pub rip_order: Option<usize>,
    /// `μ(k − 1)` for `k = rip_order`.
    pub rip_constant_bound: Option<f64>,
    pub argmax_pair: (usize, usize),
    /// Integer overlap behind `μ`, for binary column-regular matrices.
    pub max_overlap: Option<usize>,
    pub m: usize,
    pub n: usize,
}

/// `sqrt((n − m) / (m(n − 1)))`, clamped at zero for `n ≤ m`.
pub fn welch_bound(m: usize, n: usize) -> f64 {
    if n <= m || n < 2 {
        return 0.0;
    }
    ((n - m) as f64 / (m as f64 * (n - 1) as f64)).sqrt()
}

/// Coherence of a real matrix: `max_{i≠j} |⟨a_i, a_j⟩| / (‖a_i‖‖a_j‖)`.
pub fn coherence(a: &DMatrix<f64>) -> Result<CoherenceReport> {
    let (m, n) = a.shape();
    if n < 2 {
        return Err(Error::TooFewColumns(n));
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    if let Some(j) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroColumn(j));
    }
    let mut best = (f64::NEG_INFINITY, (0, 1));
    for i in 0..n {
        for j in i + 1..n {
            let c = a.column(i).dot(&a.column(j)).abs() / (norms[i] * norms[j]);
            if c > best.0 {
                best = (c, (i, j));
            }
        }
    }
    let mu = best.0;
    let rip_order = (mu > 0.0).then(|| {
        let x = 1.0 / mu + 1.0;
        // Snap round-off so that rational μ = t/r lands on the exact integer rule.
        let k = if (x - x.round()).abs() < 1e-9 * x { x.round() - 1.0 } else { x.floor() };
        k as usize
    });
    Ok(CoherenceReport {
        coherence: mu,
        welch: welch_bound(m, n),
        rip_order,
        rip_constant_bound: rip_order.map(|k| mu * (k as f64 - 1.0)),
        argmax_pair: best.1,
        max_overlap: None,
        m,
        n,
    })
}

/// Indices of the `r` largest entries, ties broken by lowest index, ascending.
pub fn top_r_support(values: &[f64], r: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(r);
    idx.sort_unstable();
    idx
}

/// Keeps the `r` largest entries of every column.
pub fn binarize(b: &RelaxedMatrix) -> BinaryMatrix {
    let supports = b
        .columns()
        .iter()
        .map(|c| top_r_support(c.values(), b.r()))
        .collect();
    BinaryMatrix { m: b.m(), r: b.r(), supports }
}

/// Output of the full pipeline.
#[derive(Debug, Clone)]
pub struct Construction {
    pub matrix: BinaryMatrix,
    pub report: CoherenceReport,
    pub trace: IterationTrace,
    pub relaxed: RelaxedMatrix,
    /// Seed actually used (differs from the configured one after retries).
    pub seed: u64,
}

/// Random start, optimisation, binarisation and coherence evaluation.
pub fn construct(
    m: usize,
    n: usize,
    r: usize,
    cfg: &OptimizerConfig,
) -> std::result::Result<Construction, OptimizeFailure> {
    if !(r >= 1 && r < m && m < n) {
        return Err(Error::Config(format!("need 1 <= r < m < n, got m={m} n={n} r={r}")).into());
    }
    cfg.validate()?;
    let b0 = random_matrix(m, n, r, cfg.seed)?;
    let (relaxed, trace) = optimize(&b0, cfg)?;
    let matrix = binarize(&relaxed);
    let report = matrix.coherence_report()?;
    let dups = matrix.duplicate_columns();
    if !dups.is_empty() {
        log::warn!(
            "seed {}: {} duplicate column pair(s) after binarisation, first {:?}",
            cfg.seed,
            dups.len(),
            dups[0]
        );
    }
    Ok(Construction { matrix, report, trace, relaxed, seed: cfg.seed })
}

/// Like [`construct`], re-seeding up to `retries` times while the binarised
/// matrix has duplicate columns. Attempt `t ≥ 1` uses `derive([seed, t])`.
pub fn construct_with_retries(
    m: usize,
    n: usize,
    r: usize,
    cfg: &OptimizerConfig,
    retries: usize,
) -> std::result::Result<Construction, OptimizeFailure> {
    let mut out = construct(m, n, r, cfg)?;
    for attempt in 1..=retries {
        if out.matrix.duplicate_columns().is_empty() {
            break;
        }
        let reseeded = OptimizerConfig { seed: seed::derive(&[cfg.seed, attempt as u64]), ..cfg.clone() };
        log::info!("retry {attempt}: re-seeding with {}", reseeded.seed);
        out = construct(m, n, r, &reseeded)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::RelaxedColumn;
    use proptest::prelude::*;

    #[test]
    fn top_r_examples() {
        assert_eq!(top_r_support(&[0.5, 0.3, 0.2], 2), vec![0, 1]);
        assert_eq!(top_r_support(&[0.4, 0.4, 0.2], 1), vec![0]);
        assert_eq!(top_r_support(&[0.1, 0.4, 0.4, 0.4], 2), vec![1, 2]);
    }

    #[test]
    fn binarize_recovers_indicator_support() {
        let cols = vec![
            RelaxedColumn::indicator(7, &[1, 3, 5]).unwrap(),
            RelaxedColumn::indicator(7, &[0, 2, 6]).unwrap(),
        ];
        let a = binarize(&RelaxedMatrix::new(cols).unwrap());
        assert_eq!(a.support(0), &[1, 3, 5]);
        assert_eq!(a.support(1), &[0, 2, 6]);
    }

    #[test]
    fn identity_has_zero_coherence() {
        let rep = coherence(&DMatrix::identity(5, 5)).unwrap();
        assert_eq!(rep.coherence, 0.0);
        assert_eq!(rep.welch, 0.0);
        assert_eq!(rep.rip_order, None);
    }

    #[test]
    fn welch_25_625() {
        let w = welch_bound(25, 625);
        assert!((w - (600.0f64 / 15600.0).sqrt()).abs() < 1e-15);
        assert!((w - 0.196116).abs() < 1e-6);
    }

    #[test]
    fn zero_column_rejected() {
        let mut a = DMatrix::identity(3, 3);
        a[(1, 1)] = 0.0;
        assert_eq!(coherence(&a), Err(Error::ZeroColumn(1)));
    }

    #[test]
    fn binary_and_real_coherence_agree() {
        let a = BinaryMatrix::from_supports(
            5,
            2,
            vec![vec![0, 1], vec![1, 2], vec![3, 4], vec![0, 4]],
        )
        .unwrap();
        let exact = a.coherence_report().unwrap();
        let real = coherence(&a.to_dense()).unwrap();
        assert_eq!(exact.coherence, 0.5);
        assert!((real.coherence - 0.5).abs() < 1e-15);
        assert_eq!(exact.argmax_pair, (0, 1));
        assert_eq!(real.argmax_pair, (0, 1));
        // k < 1/0.5 + 1 = 3
        assert_eq!(exact.rip_order, Some(2));
        assert_eq!(real.rip_order, Some(2));
        assert_eq!(exact.rip_constant_bound, Some(0.5));
    }

    #[test]
    fn rip_order_exact_arithmetic() {
        for r in 1..=8usize {
            for t in 1..=r {
                let k = r.div_ceil(t);
                // k·t < r + t <= (k + 1)·t
                assert!(k * t < r + t && r + t <= (k + 1) * t, "r={r} t={t}");
            }
        }
    }

    #[test]
    fn duplicates_are_reported() {
        let a = BinaryMatrix::from_supports(4, 2, vec![vec![0, 1], vec![2, 3], vec![0, 1]]).unwrap();
        assert_eq!(a.duplicate_columns(), vec![(0, 2)]);
        assert_eq!(a.coherence_report().unwrap().coherence, 1.0);
    }

    #[test]
    fn serialisation_formats() {
        let a = BinaryMatrix::from_supports(3, 2, vec![vec![0, 1], vec![1, 2]]).unwrap();
        assert_eq!(a.to_dense_string(), "3 2 2\n1 0\n1 1\n0 1\n");
        assert_eq!(a.to_sparse_string(), "3 2 2\n0 1\n1 2\n");
        assert_eq!(BinaryMatrix::parse(&a.to_dense_string()).unwrap(), a);
        assert_eq!(BinaryMatrix::parse(&a.to_sparse_string()).unwrap(), a);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = BinaryMatrix::parse_dense("3 2 2\n1 0\n1 x\n0 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = BinaryMatrix::parse_sparse("3 2 2\n0 1\n2 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = BinaryMatrix::parse("3 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn construct_is_deterministic() {
        let cfg = OptimizerConfig { max_iters: 200, seed: 1, ..Default::default() };
        let a = construct(9, 20, 3, &cfg).unwrap();
        let b = construct(9, 20, 3, &cfg).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert!(a.matrix.supports().iter().all(|s| s.len() == 3));
        assert!(a.report.coherence >= a.report.welch - 1e-12);
    }

    #[test]
    fn construct_validates_shape() {
        let cfg = OptimizerConfig::default();
        assert!(construct(9, 20, 9, &cfg).is_err());
        assert!(construct(9, 8, 3, &cfg).is_err());
    }

    fn arb_binary() -> impl Strategy<Value = BinaryMatrix> {
        (2usize..12, 2usize..15).prop_flat_map(|(m, n)| {
            (1..=m).prop_flat_map(move |r| {
                proptest::collection::vec(proptest::sample::subsequence((0..m).collect::<Vec<_>>(), r), n)
                    .prop_map(move |s| BinaryMatrix::from_supports(m, r, s).unwrap())
            })
        })
    }

    proptest! {
        #[test]
        fn serialisations_round_trip(a in arb_binary()) {
            prop_assert_eq!(BinaryMatrix::parse_dense(&a.to_dense_string()).unwrap(), a.clone());
            prop_assert_eq!(BinaryMatrix::parse_sparse(&a.to_sparse_string()).unwrap(), a.clone());
            prop_assert_eq!(BinaryMatrix::parse(&a.to_sparse_string()).unwrap(), a.clone());
        }

        #[test]
        fn binary_coherence_is_overlap_ratio(a in arb_binary()) {
            let rep = a.coherence_report().unwrap();
            let scaled = rep.coherence * a.r() as f64;
            prop_assert!((scaled - scaled.round()).abs() < 1e-9);
            prop_assert!(rep.coherence >= rep.welch - 1e-12);
            let real = coherence(&a.to_dense()).unwrap();
            prop_assert!((real.coherence - rep.coherence).abs() < 1e-12);
        }

        #[test]
        fn binarize_is_scale_invariant(seed in 0u64..5000, factor in 1e-3f64..1e3) {
            let b = random_matrix(9, 4, 3, seed).unwrap();
            let a = binarize(&b);
            for (j, c) in b.columns().iter().enumerate() {
                prop_assert_eq!(top_r_support(&c.scaled(factor), 3), a.support(j).to_vec());
                prop_assert_eq!(a.support(j).len(), 3);
            }
        }
    }
}
