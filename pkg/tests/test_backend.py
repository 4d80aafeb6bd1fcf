"""The compiled kernels and the pure-Python fallback must agree."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bvmem import _backend, _core_py

core = pytest.importorskip("bvmem._core", reason="compiled extension not built")


def random_problem(seed, d, T, K):
    rng = np.random.default_rng(seed)
    omega = rng.uniform(0.05, 0.5, d)
    B = rng.uniform(-0.1, 0.4, (d, d)) / d
    A = rng.uniform(-0.1, 0.4, (d, d)) / d
    x = np.ascontiguousarray(rng.uniform(0.2, 3.0, (T, d)))
    mu1 = rng.uniform(0.5, 2.0, d)
    labels = rng.integers(0, K, T).astype(np.intp)
    locs = rng.normal(scale=0.3, size=(K, d))
    M = rng.normal(size=(K, d, d))
    prec = M @ np.swapaxes(M, 1, 2) + d * np.eye(d)
    prec_chol = np.ascontiguousarray(np.linalg.cholesky(prec))
    return omega, B, A, x, mu1, labels, locs, prec_chol


def test_backend_flag_matches_import():
    assert _backend.COMPILED == (_backend.mean_recursion is core.mean_recursion)


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(2, 40), st.integers(1, 4))
def test_mean_recursion_agrees(seed, d, T, K):
    omega, B, A, x, mu1, *_ = random_problem(seed, d, T, K)
    out_c = np.empty_like(x)
    out_p = np.empty_like(x)
    assert core.mean_recursion(omega, B, A, x, mu1, out_c) == _core_py.mean_recursion(omega, B, A, x, mu1, out_p)
    np.testing.assert_allclose(out_c, out_p, rtol=1e-13)


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(2, 40), st.integers(1, 4))
def test_eta_quadratic_agrees(seed, d, T, K):
    args = random_problem(seed, d, T, K)
    omega, B, A, x, mu1, labels, locs, prec_chol = args
    logx = np.log(x)
    qc = core.eta_quadratic(omega, B, A, x, logx, mu1, labels, locs, prec_chol)
    qp = _core_py.eta_quadratic(omega, B, A, x, logx, mu1, labels, locs, prec_chol)
    assert qc == pytest.approx(qp, rel=1e-12)


def test_eta_quadratic_matches_direct_formula():
    omega, B, A, x, mu1, labels, locs, prec_chol = random_problem(3, 3, 25, 2)
    mu = np.empty_like(x)
    _core_py.mean_recursion(omega, B, A, x, mu1, mu)
    r = np.log(x) - np.log(mu) - locs[labels]
    prec = prec_chol @ np.swapaxes(prec_chol, 1, 2)
    direct = sum(r[t] @ prec[labels[t]] @ r[t] for t in range(x.shape[0]))
    q = core.eta_quadratic(omega, B, A, x, np.log(x), mu1, labels, locs, prec_chol)
    assert q == pytest.approx(direct, rel=1e-12)


def test_nonpositive_mean_gives_infinity_and_same_index():
    omega = np.array([-1.0, 0.5])
    B = np.zeros((2, 2))
    A = np.zeros((2, 2))
    x = np.ones((5, 2))
    mu1 = np.ones(2)
    labels = np.zeros(5, dtype=np.intp)
    locs = np.zeros((1, 2))
    chol = np.eye(2)[None].copy()
    for mod in (core, _core_py):
        assert mod.eta_quadratic(omega, B, A, x, np.log(x), mu1, labels, locs, chol) == np.inf
        out = np.empty_like(x)
        assert mod.mean_recursion(omega, B, A, x, mu1, out) == 1
    bad_start = np.array([0.0, 1.0])
    for mod in (core, _core_py):
        assert mod.mean_recursion(np.ones(2), B, A, x, bad_start, np.empty_like(x)) == 0
