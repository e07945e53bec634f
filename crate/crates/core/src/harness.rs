//! Experiment driver behind the `coherence-forge` binary: `generate`,
//! `evaluate` and `compare`.
//!
//! A JSON config file supplies an [`ExperimentConfig`]; every field can be
//! overridden by a command-line flag of the same name, and flags win. Each
//! command is a pure function of its config: all randomness is derived from
//! the master `seed`, and floats are written with 17 significant digits.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::{devore_matrix, random_binary_matrix, DeVoreParams};
use crate::binary::{construct_with_retries, BinaryMatrix, CoherenceReport};
use crate::error::Error;
use crate::optimizer::{OptimizeStatus, OptimizerConfig};
use crate::recovery::{run_experiment, RecoveryCell, RecoveryReport};

/// Environment variable capping the worker pool. `0` means one thread.
pub const THREADS_ENV: &str = "COHERENCE_FORGE_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Generate,
    Evaluate,
    Compare,
}

/// A matrix taking part in `compare`.
///
/// On the command line: `proposed`, `devore:P:D`, `random:SEED` or `file:PATH`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MatrixSource {
    /// Optimised construction with the config's `m`, `n`, `r` and optimizer settings.
    Proposed,
    Devore { p: u64, degree: u32 },
    /// Random column-regular matrix with the config's `m`, `n`, `r`.
    Random { seed: u64 },
    File { path: PathBuf },
}

impl MatrixSource {
    pub fn id(&self) -> String {
        match self {
            Self::Proposed => "proposed".into(),
            Self::Devore { p, degree } => format!("devore_p{p}_d{degree}"),
            Self::Random { seed } => format!("random_s{seed}"),
            Self::File { path } => format!(
                "file_{}",
                path.file_stem().map_or("matrix".into(), |s| s.to_string_lossy())
            ),
        }
    }
}

impl FromStr for MatrixSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("bad matrix source {s:?} (expected proposed, devore:P:D, random:SEED or file:PATH)");
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "proposed" if rest.is_empty() => Ok(Self::Proposed),
            "devore" => {
                let (p, d) = rest.split_once(':').ok_or_else(bad)?;
                Ok(Self::Devore { p: p.parse().map_err(|_| bad())?, degree: d.parse().map_err(|_| bad())? })
            }
            "random" => Ok(Self::Random { seed: rest.parse().map_err(|_| bad())? }),
            "file" if !rest.is_empty() => Ok(Self::File { path: rest.into() }),
            _ => Err(bad()),
        }
    }
}

/// Full description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// If set, must agree with the subcommand.
    pub mode: Option<Mode>,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub alpha_bar: f64,
    pub beta: f64,
    pub sigma: f64,
    pub tau: f64,
    pub max_iters: usize,
    pub max_backtracks: usize,
    pub alpha_ladder: Vec<f64>,
    /// Re-seed the construction up to this many times while it has duplicate columns.
    pub retry_duplicates: usize,
    /// Matrix file for `evaluate`.
    pub matrix: Option<PathBuf>,
    pub sources: Vec<MatrixSource>,
    /// Sparsity grid for `evaluate`, fig1 and fig3.
    pub k_range: Vec<usize>,
    /// Input SNR grid for `evaluate`; `"inf"` means noiseless.
    #[serde(with = "snr_list")]
    pub input_snr_list: Vec<f64>,
    #[serde(with = "snr")]
    pub fig1_snr: f64,
    pub fig2_k: usize,
    #[serde(with = "snr_list")]
    pub fig2_snr_list: Vec<f64>,
    #[serde(with = "snr")]
    pub fig3_snr: f64,
    pub trials: usize,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        Self {
            mode: None,
            m: 25,
            n: 625,
            r: 5,
            alpha_bar: opt.alpha_bar,
            beta: opt.beta,
            sigma: opt.sigma,
            tau: opt.tau,
            max_iters: opt.max_iters,
            max_backtracks: opt.max_backtracks,
            alpha_ladder: opt.alpha_ladder,
            retry_duplicates: 0,
            matrix: None,
            sources: Vec::new(),
            k_range: (1..=15).collect(),
            input_snr_list: vec![f64::INFINITY],
            fig1_snr: f64::INFINITY,
            fig2_k: 6,
            fig2_snr_list: (0..=10).map(|i| f64::from(i) * 10.0).collect(),
            fig3_snr: 35.0,
            trials: 200,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Optimizer settings; the construction is seeded with the master seed.
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            alpha_bar: self.alpha_bar,
            beta: self.beta,
            sigma: self.sigma,
            tau: self.tau,
            max_iters: self.max_iters,
            max_backtracks: self.max_backtracks,
            alpha_ladder: self.alpha_ladder.clone(),
            seed: self.seed,
        }
    }

    fn check_mode(&self, mode: Mode) -> Result<(), HarnessError> {
        match self.mode {
            Some(m) if m != mode => Err(invalid(format!("config mode {m:?} does not match command {mode:?}"))),
            _ => Ok(()),
        }
    }

    fn check_shape(&self) -> Result<(), HarnessError> {
        if !(self.r >= 1 && self.r < self.m && self.m < self.n) {
            return Err(invalid(format!("need 1 <= r < m < n, got m={} n={} r={}", self.m, self.n, self.r)));
        }
        Ok(())
    }

    fn check_grid(&self, ks: &[usize], snrs: &[f64]) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(invalid("trials must be positive"));
        }
        if ks.is_empty() || snrs.is_empty() {
            return Err(invalid("empty benchmark grid"));
        }
        if snrs.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(invalid("input SNR values must be finite or inf"));
        }
        Ok(())
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Validation(msg.into())
}

/// Serde helpers for SNR values, which may be the string `"inf"`.
mod snr {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    pub(super) enum Raw {
        Num(f64),
        Text(String),
    }

    pub(super) fn parse(raw: Raw) -> Result<f64, String> {
        match raw {
            Raw::Num(v) => Ok(v),
            Raw::Text(s) => s.trim().parse::<f64>().map_err(|_| format!("bad SNR {s:?}")),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        parse(Raw::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

mod snr_list {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::snr::{parse, Raw};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            if x.is_finite() {
                seq.serialize_element(x)?;
            } else {
                seq.serialize_element(&x.to_string())?;
            }
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Raw>::deserialize(d)?
            .into_iter()
            .map(|r| parse(r).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HarnessError {
    /// Bad config, flags or input files. Exit code 2.
    Validation(String),
    /// Failure after validation, e.g. an optimizer abort or a write error. Exit code 3.
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => EXIT_VALIDATION,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Validation(m) => write!(f, "validation error: {m}"),
            Self::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<Error> for HarnessError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidWeight { .. }
            | Error::InvalidField(_)
            | Error::DegreeTooLarge { .. }
            | Error::InvalidSparsity { .. }
            | Error::Shape(_)
            | Error::Config(_)
            | Error::Parse { .. }
            | Error::ZeroColumn(_)
            | Error::TooFewColumns(_) => Self::Validation(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), HarnessError> {
    let io = |e: std::io::Error| HarnessError::Runtime(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    f(&mut w).and_then(|()| w.flush()).map_err(io)
}

fn create_out(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Runtime(format!("{}: {e}", dir.display())))
}

/// Sizes the global worker pool from [`THREADS_ENV`]. Unset leaves rayon's default.
pub fn configure_threads() -> Result<(), HarnessError> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| invalid(format!("{THREADS_ENV}={v:?} is not a non-negative integer")))?;
    // A second initialisation in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    Ok(())
}

/// What `generate` wrote to `coherence.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    #[serde(flatten)]
    pub report: CoherenceReport,
    pub r: usize,
    /// Seed that produced the matrix (differs from the master seed after retries).
    pub seed: u64,
    pub status: Option<OptimizeStatus>,
    pub duplicate_columns: usize,
}

pub const DENSE_FILE: &str = "matrix.dense.txt";
pub const SPARSE_FILE: &str = "matrix.sparse.txt";
pub const COHERENCE_FILE: &str = "coherence.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const RECOVERY_FILE: &str = "recovery.csv";
pub const COMBINED_FILE: &str = "combined.csv";
pub const FIG1_FILE: &str = "fig1_recovery_vs_k.csv";
pub const FIG2_FILE: &str = "fig2_output_snr_vs_input_snr.csv";
pub const FIG3_FILE: &str = "fig3_output_snr_vs_k.csv";

/// Optimises, binarises and writes the matrix (dense and sparse), its
/// coherence report and the iteration trace. On optimizer failure the partial
/// trace is still written.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<GenerateSummary, HarnessError> {
    cfg.check_mode(Mode::Generate)?;
    cfg.check_shape()?;
    let opt = cfg.optimizer();
    opt.validate()?;
    create_out(&cfg.out)?;

    let c = match construct_with_retries(cfg.m, cfg.n, cfg.r, &opt, cfg.retry_duplicates) {
        Ok(c) => c,
        Err(fail) => {
            write_file(&cfg.out.join(TRACE_FILE), |w| fail.trace.write_csv(w))?;
            return Err(HarnessError::from(fail.error.clone()).into_runtime());
        }
    };
    let summary = GenerateSummary {
        report: c.report.clone(),
        r: c.matrix.r(),
        seed: c.seed,
        status: c.trace.final_status(),
        duplicate_columns: c.matrix.duplicate_columns().len(),
    };
    write_file(&cfg.out.join(DENSE_FILE), |w| c.matrix.write_dense(w))?;
    write_file(&cfg.out.join(SPARSE_FILE), |w| c.matrix.write_sparse(w))?;
    write_file(&cfg.out.join(TRACE_FILE), |w| c.trace.write_csv(w))?;
    write_file(&cfg.out.join(COHERENCE_FILE), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)
    })?;
    log::info!("generated {}x{} matrix, coherence {}", cfg.m, cfg.n, summary.report.coherence);
    Ok(summary)
}

impl HarnessError {
    fn into_runtime(self) -> Self {
        match self {
            Self::Validation(m) | Self::Runtime(m) => Self::Runtime(m),
        }
    }
}

pub fn load_matrix(path: &Path) -> Result<BinaryMatrix, HarnessError> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
    BinaryMatrix::parse(&text).map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))
}

fn check_sparsity(id: &str, a: &BinaryMatrix, ks: &[usize]) -> Result<(), HarnessError> {
    if let Some(&k) = ks.iter().find(|&&k| k > a.m()) {
        return Err(invalid(format!("{id}: sparsity k={k} exceeds m={}", a.m())));
    }
    Ok(())
}

/// Benchmarks one matrix file over `k_range × input_snr_list` and writes
/// `recovery.csv`.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<RecoveryReport, HarnessError> {
    cfg.check_mode(Mode::Evaluate)?;
    let path = cfg.matrix.as_deref().ok_or_else(|| invalid("evaluate needs a matrix file"))?;
    cfg.check_grid(&cfg.k_range, &cfg.input_snr_list)?;
    let a = load_matrix(path)?;
    let id = MatrixSource::File { path: path.to_path_buf() }.id();
    check_sparsity(&id, &a, &cfg.k_range)?;
    create_out(&cfg.out)?;
    let report = run_experiment(&a, &id, &cfg.k_range, &cfg.input_snr_list, cfg.trials, cfg.seed)?;
    write_file(&cfg.out.join(RECOVERY_FILE), |w| report.write_csv(w))?;
    Ok(report)
}

/// Everything `compare` produced, keyed by matrix id in source order.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub ids: Vec<String>,
    pub coherence: BTreeMap<String, CoherenceReport>,
    pub reports: Vec<RecoveryReport>,
}

impl Comparison {
    pub fn report(&self, id: &str) -> Option<&RecoveryReport> {
        self.reports.iter().find(|r| r.matrix_id == id)
    }
}

/// Grid cells needed by the three figures, as `k → sorted SNR list`.
fn figure_grid(cfg: &ExperimentConfig) -> BTreeMap<usize, Vec<f64>> {
    let mut grid: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &k in &cfg.k_range {
        grid.entry(k).or_default().extend([cfg.fig1_snr, cfg.fig3_snr]);
    }
    grid.entry(cfg.fig2_k).or_default().extend(&cfg.fig2_snr_list);
    for snrs in grid.values_mut() {
        snrs.sort_by(f64::total_cmp);
        snrs.dedup_by(|a, b| a.total_cmp(b).is_eq());
    }
    grid
}

fn build_matrix(cfg: &ExperimentConfig, src: &MatrixSource) -> Result<BinaryMatrix, HarnessError> {
    match src {
        MatrixSource::Proposed => {
            cfg.check_shape()?;
            construct_with_retries(cfg.m, cfg.n, cfg.r, &cfg.optimizer(), cfg.retry_duplicates)
                .map(|c| c.matrix)
                .map_err(|f| HarnessError::Runtime(format!("proposed: {}", f.error)))
        }
        MatrixSource::Devore { p, degree } => Ok(devore_matrix(DeVoreParams::new(*p, *degree)?)),
        MatrixSource::Random { seed } => Ok(random_binary_matrix(cfg.m, cfg.n, cfg.r, *seed)?),
        MatrixSource::File { path } => load_matrix(path),
    }
}

/// Benchmarks at least two matrices on the shared figure grid with the shared
/// master seed and writes `combined.csv`, the three figure-data files and
/// `coherence.json`. Every matrix is loaded or built before any trial runs.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<Comparison, HarnessError> {
    cfg.check_mode(Mode::Compare)?;
    if cfg.sources.len() < 2 {
        return Err(invalid(format!("compare needs at least 2 matrix sources, got {}", cfg.sources.len())));
    }
    let ids: Vec<String> = cfg.sources.iter().map(MatrixSource::id).collect();
    for (i, id) in ids.iter().enumerate() {
        if ids[..i].contains(id) {
            return Err(invalid(format!("duplicate matrix source {id}")));
        }
    }
    let mut all_snrs = cfg.fig2_snr_list.clone();
    all_snrs.extend([cfg.fig1_snr, cfg.fig3_snr]);
    cfg.check_grid(&cfg.k_range, &all_snrs)?;
    if cfg.sources.contains(&MatrixSource::Proposed) {
        cfg.check_shape()?;
        cfg.optimizer().validate()?;
    }
    let grid = figure_grid(cfg);
    let ks: Vec<usize> = grid.keys().copied().collect();

    // Cheap sources first so that a bad file fails before a long optimisation.
    let mut order: Vec<usize> = (0..cfg.sources.len()).collect();
    order.sort_by_key(|&i| cfg.sources[i] == MatrixSource::Proposed);
    let mut matrices: Vec<Option<BinaryMatrix>> = vec![None; cfg.sources.len()];
    for i in order {
        let a = build_matrix(cfg, &cfg.sources[i])?;
        check_sparsity(&ids[i], &a, &ks)?;
        matrices[i] = Some(a);
    }
    let matrices: Vec<BinaryMatrix> = matrices.into_iter().map(Option::unwrap).collect();
    create_out(&cfg.out)?;

    let mut coherence = BTreeMap::new();
    let mut reports = Vec::with_capacity(matrices.len());
    for (id, a) in ids.iter().zip(&matrices) {
        coherence.insert(id.clone(), a.coherence_report()?);
        let mut cells: Vec<RecoveryCell> = Vec::new();
        for (&k, snrs) in &grid {
            cells.extend(run_experiment(a, id, &[k], snrs, cfg.trials, cfg.seed)?.cells);
        }
        log::info!("{id}: {} cells done", cells.len());
        reports.push(RecoveryReport { matrix_id: id.clone(), seed: cfg.seed, cells });
    }
    let cmp = Comparison { ids, coherence, reports };

    write_file(&cfg.out.join(COMBINED_FILE), |w| {
        writeln!(w, "{}", RecoveryReport::CSV_HEADER)?;
        cmp.reports.iter().try_for_each(|r| r.write_csv_rows(&mut *w))
    })?;
    let fig1 = figure_rows(&cmp, &cfg.k_range, |k| (k, cfg.fig1_snr), |c| c.recovery_pct);
    let fig2 = figure_rows(&cmp, &cfg.fig2_snr_list, |s| (cfg.fig2_k, s), |c| c.mean_output_snr_db);
    let fig3 = figure_rows(&cmp, &cfg.k_range, |k| (k, cfg.fig3_snr), |c| c.mean_output_snr_db);
    let header = |title: String| format!("# {title}\n# trials={} seed={}", cfg.trials, cfg.seed);
    write_figure(
        &cfg.out.join(FIG1_FILE),
        &header(format!("recovery percentage vs sparsity k, input SNR {} dB", cfg.fig1_snr)),
        "k",
        &cmp.ids,
        &fig1,
    )?;
    write_figure(
        &cfg.out.join(FIG2_FILE),
        &header(format!("mean output SNR (dB) vs input SNR (dB), k = {}", cfg.fig2_k)),
        "input_snr_db",
        &cmp.ids,
        &fig2,
    )?;
    write_figure(
        &cfg.out.join(FIG3_FILE),
        &header(format!("mean output SNR (dB) vs sparsity k, input SNR {} dB", cfg.fig3_snr)),
        "k",
        &cmp.ids,
        &fig3,
    )?;
    write_file(&cfg.out.join(COHERENCE_FILE), |w| {
        serde_json::to_writer_pretty(&mut *w, &cmp.coherence)?;
        writeln!(w)
    })?;
    Ok(cmp)
}

fn figure_rows<X: Copy + fmt::Display>(
    cmp: &Comparison,
    xs: &[X],
    cell: impl Fn(X) -> (usize, f64),
    y: impl Fn(&RecoveryCell) -> f64,
) -> Vec<(String, Vec<f64>)> {
    xs.iter()
        .map(|&x| {
            let (k, snr) = cell(x);
            let ys = cmp
                .reports
                .iter()
                .map(|r| r.cell(k, snr).map_or(f64::NAN, &y))
                .collect();
            (x.to_string(), ys)
        })
        .collect()
}

fn write_figure(
    path: &Path,
    header: &str,
    x_name: &str,
    ids: &[String],
    rows: &[(String, Vec<f64>)],
) -> Result<(), HarnessError> {
    write_file(path, |w| {
        writeln!(w, "{header}")?;
        writeln!(w, "{x_name},{}", ids.join(","))?;
        for (x, ys) in rows {
            write!(w, "{x}")?;
            for y in ys {
                write!(w, ",{y:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

/// Reads a figure-data file back as `(x column, one column per matrix)`.
pub fn read_figure(text: &str) -> Result<(Vec<String>, Vec<(f64, Vec<f64>)>), HarnessError> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| invalid("empty figure file"))?;
    let ids: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    let rows = lines
        .map(|l| {
            let vals: Vec<f64> = l
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|_| invalid(format!("bad value {v:?}"))))
                .collect::<Result<_, _>>()?;
            Ok((vals[0], vals[1..].to_vec()))
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok((ids, rows))
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<T>().map_err(|_| format!("bad list element {t:?}")))
        .collect()
}

/// `1-15`, `1,2,5` or a mix such as `1-3,8`.
fn parse_k_range(s: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) =
                    (a.parse().map_err(|_| format!("bad range {part:?}"))?, b.parse().map_err(|_| format!("bad range {part:?}"))?);
                if a > b {
                    return Err(format!("empty range {part:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| format!("bad k {part:?}"))?),
        }
    }
    Ok(out)
}

/// Comma list of SNR values (`inf` allowed) or `start:stop:step`.
fn parse_snr_list(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if let [a, b, step] = parts[..] {
        let (a, b, step): (f64, f64, f64) = (
            a.parse().map_err(|_| format!("bad SNR range {s:?}"))?,
            b.parse().map_err(|_| format!("bad SNR range {s:?}"))?,
            step.parse().map_err(|_| format!("bad SNR range {s:?}"))?,
        );
        if !(step > 0.0) || !(a <= b) || !a.is_finite() || !b.is_finite() {
            return Err(format!("bad SNR range {s:?}"));
        }
        let count = ((b - a) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|i| a + i as f64 * step).collect());
    }
    parse_list(s)
}

#[derive(Debug, Parser)]
#[command(name = "coherence-forge", version, about = "Low-coherence binary sensing matrices: construction and OMP benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimise and binarise a matrix; write it with its coherence report and trace.
    Generate(Flags),
    /// Benchmark one matrix file with OMP.
    Evaluate(Flags),
    /// Benchmark several matrices on the shared figure grid.
    Compare(Flags),
}

/// Flags mirroring [`ExperimentConfig`]; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Matrix file to evaluate (dense or sparse text).
    #[arg(value_name = "MATRIX")]
    pub matrix_pos: Option<PathBuf>,
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub alpha_bar: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub max_backtracks: Option<usize>,
    /// Comma-separated sharpness rungs.
    #[arg(long)]
    pub alpha_ladder: Option<String>,
    #[arg(long)]
    pub retry_duplicates: Option<usize>,
    /// Matrix source (repeatable): proposed, devore:P:D, random:SEED, file:PATH.
    #[arg(long = "source")]
    pub sources: Vec<MatrixSource>,
    /// Sparsity levels, e.g. `1-15` or `1,2,4`.
    #[arg(long)]
    pub k_range: Option<String>,
    /// Input SNRs in dB, e.g. `inf`, `10,20,inf` or `0:100:10`.
    #[arg(long)]
    pub input_snr_list: Option<String>,
    #[arg(long)]
    pub fig1_snr: Option<f64>,
    #[arg(long)]
    pub fig2_k: Option<usize>,
    #[arg(long)]
    pub fig2_snr_list: Option<String>,
    #[arg(long)]
    pub fig3_snr: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Flags {
    /// Config file (or defaults) with every given flag applied on top.
    pub fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! over {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    cfg.$f = v.clone();
                }
            )*};
        }
        over!(
            m, n, r, alpha_bar, beta, sigma, tau, max_iters, max_backtracks, retry_duplicates,
            fig1_snr, fig2_k, fig3_snr, trials, out, seed
        );
        let list = |flag: &str, v: &Option<String>, parse: fn(&str) -> Result<_, String>| {
            v.as_deref().map(|s| parse(s).map_err(|e| invalid(format!("--{flag}: {e}")))).transpose()
        };
        if let Some(v) = list("alpha-ladder", &self.alpha_ladder, parse_list::<f64>)? {
            cfg.alpha_ladder = v;
        }
        if let Some(v) = list("input-snr-list", &self.input_snr_list, parse_snr_list)? {
            cfg.input_snr_list = v;
        }
        if let Some(v) = list("fig2-snr-list", &self.fig2_snr_list, parse_snr_list)? {
            cfg.fig2_snr_list = v;
        }
        if let Some(s) = &self.k_range {
            cfg.k_range = parse_k_range(s).map_err(|e| invalid(format!("--k-range: {e}")))?;
        }
        if let Some(p) = self.matrix.as_ref().or(self.matrix_pos.as_ref()) {
            cfg.matrix = Some(p.clone());
        }
        if !self.sources.is_empty() {
            cfg.sources = self.sources.clone();
        }
        Ok(cfg)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Generate(f) => f.resolve().and_then(|c| cmd_generate(&c)).map(|_| ()),
        Command::Evaluate(f) => f.resolve().and_then(|c| cmd_evaluate(&c)).map(|_| ()),
        Command::Compare(f) => f.resolve().and_then(|c| cmd_compare(&c)).map(|_| ()),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("coherence-forge: {e}");
            e.exit_code()
        }
    }
}
