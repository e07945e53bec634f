use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(code: &std::ffi::CStr) {
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(coherence_forge_py::coherence_forge_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("cf", m).unwrap();
        py.run(code, Some(&globals), None).unwrap_or_else(|e| panic!("{e}"));
    });
}

#[test]
fn devore_and_round_trip() {
    with_module(c"
a = cf.devore_matrix(3, 2)
assert (a.m, a.n, a.r) == (9, 27, 3)
assert a.coherence_report()['coherence'] == 2 / 3
assert cf.BinaryMatrix.parse(a.to_dense_string()) == a
assert a.overlap(0, 1) <= 2
");
}

#[test]
fn errors_map_to_python_exceptions() {
    with_module(c"
for bad in (lambda: cf.devore_matrix(6, 1), lambda: cf.random_matrix(4, 3, 5, 0),
            lambda: cf.OptimizerConfig(beta=1.5), lambda: cf.BinaryMatrix(3, 1, [[0, 1]])):
    try:
        bad()
    except ValueError:
        pass
    else:
        raise AssertionError('expected ValueError')
");
}

#[test]
fn optimize_and_recover() {
    with_module(c"
b0 = cf.random_matrix(6, 8, 2, 1)
cfg = cf.OptimizerConfig(max_iters=100, alpha_ladder=[5.0], seed=1)
cfg.max_iters = 150
b, status, trace = cf.optimize(b0, cfg)
assert len(trace) >= 1 and trace[-1][0] == len(trace) - 1
assert cf.objective(b, 5.0 / 2) <= cf.objective(b0, 5.0 / 2) + 1e-12
x, y = cf.sample_measurement(cf.devore_matrix(5, 1), 1, 3)
est, active, res, singular = cf.omp(cf.devore_matrix(5, 1), y, 1)
assert max(abs(p - q) for p, q in zip(x, est)) < 1e-10
");
}
