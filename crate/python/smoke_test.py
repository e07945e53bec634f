"""Smoke test for the Python bindings.

Build and install first, e.g.:

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml
"""

import math

import coherence_forge_py as cf


def main():
    w = cf.welch_bound(25, 625)
    assert abs(w - 0.196116) < 1e-6, w

    assert cf.smooth_max([1.0, 2.0, 3.0], 0.0) == 2.0
    assert abs(cf.smooth_max([0.0, 1.0], 10.0) - 0.9999546) < 1e-7

    dv = cf.devore_matrix(5, 3)
    assert (dv.m, dv.n, dv.r) == (25, 625, 5)
    rep = dv.coherence_report()
    assert rep["coherence"] == 0.6 and rep["max_overlap"] == 3, rep
    assert cf.BinaryMatrix.parse(dv.to_sparse_string()) == dv
    assert cf.BinaryMatrix.parse(dv.to_dense_string()) == dv

    real = cf.coherence([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
    assert abs(real["coherence"] - 1 / math.sqrt(2)) < 1e-12

    b0 = cf.random_matrix(8, 12, 2, 5)
    assert abs(b0.frobenius_sq() - 12 / 2) < 1e-10
    for col in b0.columns():
        assert abs(sum(col) - 1.0) < 1e-12

    cfg = cf.OptimizerConfig(max_iters=200, alpha_ladder=[5.0, 20.0], seed=3)
    f0 = cf.objective(b0, 1.0)
    b, status, trace = cf.optimize(b0, cfg)
    assert status in ("converged", "iteration-cap", "near-stationary-stall"), status
    assert cf.objective(b, 1.0) <= f0 + 1e-12
    assert trace[0][2] >= trace[-1][2] - 1e-12 or trace[-1][1] > 0

    out = cf.construct(9, 20, 3, cf.OptimizerConfig(max_iters=300, seed=1))
    a = out["matrix"]
    assert all(len(s) == 3 for s in a.supports())
    assert out["report"]["coherence"] >= out["report"]["welch"] - 1e-12
    again = cf.construct(9, 20, 3, cf.OptimizerConfig(max_iters=300, seed=1))
    assert again["matrix"] == a

    x, y = cf.sample_measurement(dv, 1, signal_seed=11)
    est, active, residuals, singular = cf.omp(dv, y, 1)
    assert not singular and len(active) == 1
    assert max(abs(p - q) for p, q in zip(x, est)) < 1e-10

    cells = cf.run_experiment(dv, [1, 2], [math.inf, 20.0], 20, 0, matrix_id="devore")
    assert [(c["k"], c["input_snr_db"]) for c in cells] == [(1, math.inf), (1, 20.0), (2, math.inf), (2, 20.0)]
    noiseless_k1 = next(c for c in cells if c["k"] == 1 and math.isinf(c["input_snr_db"]))
    assert noiseless_k1["recovery_pct"] == 100.0

    try:
        cf.devore_matrix(4, 1)
    except ValueError:
        pass
    else:
        raise AssertionError("non-prime field accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
