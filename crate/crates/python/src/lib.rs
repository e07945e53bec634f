//! Python bindings: `import coherence_forge_py`.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use coherence_forge as cf;

fn to_py_err(e: cf::Error) -> PyErr {
    match e {
        cf::Error::DegeneratePoint
        | cf::Error::RetractionFailure(_)
        | cf::Error::LineSearchStall { .. }
        | cf::Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn report_dict<'py>(py: Python<'py>, r: &cf::CoherenceReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("coherence", r.coherence)?;
    d.set_item("welch", r.welch)?;
    d.set_item("rip_order", r.rip_order)?;
    d.set_item("rip_constant_bound", r.rip_constant_bound)?;
    d.set_item("argmax_pair", r.argmax_pair)?;
    d.set_item("max_overlap", r.max_overlap)?;
    d.set_item("m", r.m)?;
    d.set_item("n", r.n)?;
    Ok(d)
}

/// Column-regular 0/1 matrix stored as per-column supports.
#[pyclass(name = "BinaryMatrix", module = "coherence_forge_py", frozen)]
pub struct PyBinaryMatrix {
    inner: cf::BinaryMatrix,
}

#[pymethods]
impl PyBinaryMatrix {
    #[new]
    fn new(m: usize, r: usize, supports: Vec<Vec<usize>>) -> PyResult<Self> {
        cf::BinaryMatrix::from_supports(m, r, supports)
            .map(|inner| Self { inner })
            .map_err(to_py_err)
    }

    /// Parses the dense or sparse text format.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        cf::BinaryMatrix::parse(text).map(|inner| Self { inner }).map_err(to_py_err)
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn r(&self) -> usize {
        self.inner.r()
    }

    fn supports(&self) -> Vec<Vec<usize>> {
        self.inner.supports().to_vec()
    }

    /// Row-major list of rows.
    fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.inner.m())
            .map(|i| (0..self.inner.n()).map(|j| self.inner.get(i, j)).collect())
            .collect()
    }

    fn to_dense_string(&self) -> String {
        self.inner.to_dense_string()
    }

    fn to_sparse_string(&self) -> String {
        self.inner.to_sparse_string()
    }

    fn overlap(&self, i: usize, j: usize) -> PyResult<usize> {
        if i >= self.inner.n() || j >= self.inner.n() {
            return Err(PyValueError::new_err("column index out of range"));
        }
        Ok(self.inner.overlap(i, j))
    }

    fn duplicate_columns(&self) -> Vec<(usize, usize)> {
        self.inner.duplicate_columns()
    }

    fn coherence_report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        report_dict(py, &self.inner.coherence_report().map_err(to_py_err)?)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("BinaryMatrix(m={}, n={}, r={})", self.inner.m(), self.inner.n(), self.inner.r())
    }
}

/// Point of the product manifold: `n` columns on the simplex/sphere slice.
#[pyclass(name = "RelaxedMatrix", module = "coherence_forge_py", frozen)]
pub struct PyRelaxedMatrix {
    inner: cf::RelaxedMatrix,
}

#[pymethods]
impl PyRelaxedMatrix {
    /// Validates every column against the manifold constraints.
    #[new]
    fn new(columns: Vec<Vec<f64>>, r: usize) -> PyResult<Self> {
        let cols = columns
            .into_iter()
            .map(|c| cf::RelaxedColumn::new(c, r))
            .collect::<cf::Result<Vec<_>>>()
            .map_err(to_py_err)?;
        cf::RelaxedMatrix::new(cols).map(|inner| Self { inner }).map_err(to_py_err)
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn r(&self) -> usize {
        self.inner.r()
    }

    fn columns(&self) -> Vec<Vec<f64>> {
        self.inner.columns().iter().map(|c| c.values().to_vec()).collect()
    }

    fn frobenius_sq(&self) -> f64 {
        self.inner.frobenius_sq()
    }

    fn min_entry(&self) -> f64 {
        self.inner.min_entry()
    }

    fn binarize(&self) -> PyBinaryMatrix {
        PyBinaryMatrix { inner: cf::binarize(&self.inner) }
    }

    fn __repr__(&self) -> String {
        format!("RelaxedMatrix(m={}, n={}, r={})", self.inner.m(), self.inner.n(), self.inner.r())
    }
}

#[pyclass(name = "OptimizerConfig", module = "coherence_forge_py", get_all, set_all)]
pub struct PyOptimizerConfig {
    alpha_bar: f64,
    beta: f64,
    sigma: f64,
    tau: f64,
    max_iters: usize,
    max_backtracks: usize,
    alpha_ladder: Vec<f64>,
    seed: u64,
}

impl From<&PyOptimizerConfig> for cf::OptimizerConfig {
    fn from(c: &PyOptimizerConfig) -> Self {
        cf::OptimizerConfig {
            alpha_bar: c.alpha_bar,
            beta: c.beta,
            sigma: c.sigma,
            tau: c.tau,
            max_iters: c.max_iters,
            max_backtracks: c.max_backtracks,
            alpha_ladder: c.alpha_ladder.clone(),
            seed: c.seed,
        }
    }
}

#[pymethods]
impl PyOptimizerConfig {
    #[new]
    #[pyo3(signature = (*, alpha_bar=None, beta=None, sigma=None, tau=None, max_iters=None, max_backtracks=None, alpha_ladder=None, seed=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        alpha_bar: Option<f64>,
        beta: Option<f64>,
        sigma: Option<f64>,
        tau: Option<f64>,
        max_iters: Option<usize>,
        max_backtracks: Option<usize>,
        alpha_ladder: Option<Vec<f64>>,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let d = cf::OptimizerConfig::default();
        let cfg = Self {
            alpha_bar: alpha_bar.unwrap_or(d.alpha_bar),
            beta: beta.unwrap_or(d.beta),
            sigma: sigma.unwrap_or(d.sigma),
            tau: tau.unwrap_or(d.tau),
            max_iters: max_iters.unwrap_or(d.max_iters),
            max_backtracks: max_backtracks.unwrap_or(d.max_backtracks),
            alpha_ladder: alpha_ladder.unwrap_or(d.alpha_ladder),
            seed: seed.unwrap_or(d.seed),
        };
        cf::OptimizerConfig::from(&cfg).validate().map_err(to_py_err)?;
        Ok(cfg)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", cf::OptimizerConfig::from(self))
    }
}

fn config_or_default(config: Option<PyRef<'_, PyOptimizerConfig>>) -> cf::OptimizerConfig {
    config.map_or_else(cf::OptimizerConfig::default, |c| cf::OptimizerConfig::from(&*c))
}

fn trace_rows(trace: &cf::IterationTrace) -> Vec<(usize, usize, f64, f64, f64, usize)> {
    trace
        .records
        .iter()
        .map(|r| (r.iter, r.rung, r.objective, r.grad_norm, r.step, r.backtracks))
        .collect()
}

fn status_name(trace: &cf::IterationTrace) -> Option<String> {
    trace.final_status().map(|s| status_str(&s))
}

fn status_str(s: &cf::OptimizeStatus) -> String {
    match s {
        cf::OptimizeStatus::Converged => "converged",
        cf::OptimizeStatus::IterationCap => "iteration-cap",
        cf::OptimizeStatus::NearStationaryStall => "near-stationary-stall",
        cf::OptimizeStatus::RetractionFailure => "retraction-failure",
        cf::OptimizeStatus::LineSearchStall => "line-search-stall",
    }
    .to_string()
}

#[pyfunction]
fn random_matrix(m: usize, n: usize, r: usize, seed: u64) -> PyResult<PyRelaxedMatrix> {
    cf::random_matrix(m, n, r, seed).map(|inner| PyRelaxedMatrix { inner }).map_err(to_py_err)
}

/// Smooth-max objective at raw sharpness `alpha`.
#[pyfunction]
fn objective(b: &PyRelaxedMatrix, alpha: f64) -> PyResult<f64> {
    let p = cf::ObjectiveParams::new(alpha, b.inner.r()).map_err(to_py_err)?;
    cf::objective(&b.inner, p).map_err(to_py_err)
}

#[pyfunction]
fn smooth_max(x: Vec<f64>, alpha: f64) -> PyResult<f64> {
    cf::smooth_max(&x, alpha).map_err(to_py_err)
}

#[pyfunction]
fn welch_bound(m: usize, n: usize) -> f64 {
    cf::welch_bound(m, n)
}

/// Coherence of a real matrix given as a list of rows.
#[pyfunction]
fn coherence<'py>(py: Python<'py>, rows: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if m == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("rows must form a non-empty rectangle"));
    }
    let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    report_dict(py, &cf::coherence(&a).map_err(to_py_err)?)
}

#[pyfunction]
fn devore_matrix(p: u64, degree: u32) -> PyResult<PyBinaryMatrix> {
    let params = cf::DeVoreParams::new(p, degree).map_err(to_py_err)?;
    Ok(PyBinaryMatrix { inner: cf::devore_matrix(params) })
}

#[pyfunction]
fn random_binary_matrix(m: usize, n: usize, r: usize, seed: u64) -> PyResult<PyBinaryMatrix> {
    cf::random_binary_matrix(m, n, r, seed)
        .map(|inner| PyBinaryMatrix { inner })
        .map_err(to_py_err)
}

/// Runs the optimizer from `b0`. Returns `(point, status, trace rows)` where each
/// trace row is `(iter, rung, objective, grad_norm, step, backtracks)`.
#[pyfunction]
#[pyo3(signature = (b0, config=None))]
fn optimize(
    py: Python<'_>,
    b0: &PyRelaxedMatrix,
    config: Option<PyRef<'_, PyOptimizerConfig>>,
) -> PyResult<(PyRelaxedMatrix, Option<String>, Vec<(usize, usize, f64, f64, f64, usize)>)> {
    let cfg = config_or_default(config);
    let b0 = b0.inner.clone();
    let (b, trace) = py.detach(|| cf::optimize(&b0, &cfg)).map_err(|f| to_py_err(f.error))?;
    Ok((PyRelaxedMatrix { inner: b }, status_name(&trace), trace_rows(&trace)))
}

/// Random start, optimisation and binarisation. Returns a dict with
/// `matrix`, `report`, `relaxed`, `status`, `trace` and `seed`.
#[pyfunction]
#[pyo3(signature = (m, n, r, config=None, retries=0))]
fn construct<'py>(
    py: Python<'py>,
    m: usize,
    n: usize,
    r: usize,
    config: Option<PyRef<'py, PyOptimizerConfig>>,
    retries: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_or_default(config);
    let c = py
        .detach(|| cf::construct_with_retries(m, n, r, &cfg, retries))
        .map_err(|f| to_py_err(f.error))?;
    let d = PyDict::new(py);
    d.set_item("report", report_dict(py, &c.report)?)?;
    d.set_item("status", status_name(&c.trace))?;
    d.set_item("trace", trace_rows(&c.trace))?;
    d.set_item("seed", c.seed)?;
    d.set_item("matrix", PyBinaryMatrix { inner: c.matrix })?;
    d.set_item("relaxed", PyRelaxedMatrix { inner: c.relaxed })?;
    Ok(d)
}

/// OMP with budget `k`. Returns `(estimate, active, residual_norms, singular)`.
#[pyfunction]
fn omp(a: &PyBinaryMatrix, y: Vec<f64>, k: usize) -> PyResult<(Vec<f64>, Vec<usize>, Vec<f64>, bool)> {
    let out = cf::omp(&a.inner, &y, k).map_err(to_py_err)?;
    Ok((out.estimate, out.active, out.residual_norms, out.singular))
}

/// Noisy measurement `y = Ax + w` of a seeded `k`-sparse signal. Returns `(x, y)`.
#[pyfunction]
#[pyo3(signature = (a, k, signal_seed, input_snr_db=f64::INFINITY, noise_seed=0))]
fn sample_measurement(
    a: &PyBinaryMatrix,
    k: usize,
    signal_seed: u64,
    input_snr_db: f64,
    noise_seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let x = cf::gen_sparse_signal(a.inner.n(), k, signal_seed).map_err(to_py_err)?;
    let y = cf::measure(&a.inner, &x, input_snr_db, noise_seed).map_err(to_py_err)?;
    Ok((x.values().to_vec(), y))
}

/// Recovery benchmark. Returns one dict per `(k, snr)` cell.
#[pyfunction]
#[pyo3(signature = (a, k_range, input_snr_list, trials, seed, matrix_id="matrix"))]
fn run_experiment<'py>(
    py: Python<'py>,
    a: &PyBinaryMatrix,
    k_range: Vec<usize>,
    input_snr_list: Vec<f64>,
    trials: usize,
    seed: u64,
    matrix_id: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let inner = a.inner.clone();
    let report = py
        .detach(|| cf::run_experiment(&inner, matrix_id, &k_range, &input_snr_list, trials, seed))
        .map_err(to_py_err)?;
    report
        .cells
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("matrix_id", &report.matrix_id)?;
            d.set_item("k", c.k)?;
            d.set_item("input_snr_db", c.input_snr_db)?;
            d.set_item("trials", c.trials)?;
            d.set_item("successes", c.successes)?;
            d.set_item("recovery_pct", c.recovery_pct)?;
            d.set_item("mean_output_snr_db", c.mean_output_snr_db)?;
            d.set_item("failed_trials", c.failed_trials)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
pub fn coherence_forge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBinaryMatrix>()?;
    m.add_class::<PyRelaxedMatrix>()?;
    m.add_class::<PyOptimizerConfig>()?;
    m.add_function(wrap_pyfunction!(random_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(objective, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_max, m)?)?;
    m.add_function(wrap_pyfunction!(welch_bound, m)?)?;
    m.add_function(wrap_pyfunction!(coherence, m)?)?;
    m.add_function(wrap_pyfunction!(devore_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(random_binary_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(construct, m)?)?;
    m.add_function(wrap_pyfunction!(omp, m)?)?;
    m.add_function(wrap_pyfunction!(sample_measurement, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("SNR_CAP_DB", cf::recovery::SNR_CAP_DB)?;
    Ok(())
}
