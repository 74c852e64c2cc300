import importlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncdmm import _kernels_py, kernels

try:
    from ncdmm import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

needs_compiled = pytest.mark.skipif(_compiled is None, reason="compiled extension not built")


def stencil_inputs(rng, n_centres=40, per=9):
    offsets = np.arange(0, per * n_centres + 1, per, dtype=np.int64)
    ring = np.array([(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, -1), (-1, 1), (1, 1), (0, 2)], dtype=float)
    d = np.tile(ring, (n_centres, 1)) * rng.uniform(0.5, 20.0, (n_centres * per, 1))
    d += rng.uniform(-0.1, 0.1, d.shape) * np.abs(d).max(axis=1, keepdims=True)
    r = np.hypot(d[:, 0], d[:, 1])
    wsq = (r / r.max()) ** -6
    return offsets, d[:, 0].copy(), d[:, 1].copy(), wsq


def flux_inputs(rng, n=30, npair=80):
    pairs = rng.choice(n, size=(npair, 2))
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pi = np.ascontiguousarray(pairs[:, 0], dtype=np.int64)
    pj = np.ascontiguousarray(pairs[:, 1], dtype=np.int64)
    node = lambda lo, hi: rng.uniform(lo, hi, n)
    row_o = (2 * np.arange(n)).astype(np.int64)
    row_w = row_o + 1
    row_o[3] = row_w[3] = -1  # a Dirichlet node
    args = dict(
        T=rng.uniform(0.1, 5.0, len(pi)), p=node(10, 20), krw=node(0, 1), kro=node(0, 1), dkrw=node(0, 3),
        dkro=node(-3, 0), bw=node(0.9, 1.1), bo=node(0.9, 1.1), dbw=node(-1e-3, 0), dbo=node(-1e-3, 0),
        muw=np.full(n, 0.6), muo=np.full(n, 2.0), idx_p=(2 * np.arange(n)).astype(np.int64),
        idx_s=(2 * np.arange(n) + 1).astype(np.int64), row_o=row_o, row_w=row_w,
    )
    return pi, pj, args, 2 * n


def run_flux(mod, pi, pj, args, size):
    m = kernels.NNZ_PER_PAIR * len(pi)
    R = np.zeros(size)
    jr, jc, jv = np.empty(m, dtype=np.int64), np.empty(m, dtype=np.int64), np.empty(m)
    a = args
    fo, fw = mod.pair_flux(pi, pj, a["T"], a["p"], a["krw"], a["kro"], a["dkrw"], a["dkro"], a["bw"], a["bo"],
                           a["dbw"], a["dbo"], a["muw"], a["muo"], a["idx_p"], a["idx_s"], a["row_o"], a["row_w"],
                           R, jr, jc, jv)
    return R, jr, jc, jv, np.asarray(fo), np.asarray(fw)


class TestSelection:
    def test_env_forces_python(self, monkeypatch):
        monkeypatch.setenv("NCDMM_PURE_PYTHON", "1")
        try:
            mod = importlib.reload(kernels)
            assert mod.BACKEND == "python"
            assert mod.pair_flux is _kernels_py.pair_flux
        finally:
            monkeypatch.delenv("NCDMM_PURE_PYTHON")
            importlib.reload(kernels)

    @needs_compiled
    def test_compiled_is_default(self):
        assert kernels.BACKEND == "cython"


@needs_compiled
class TestEquivalence:
    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_stencil_batch(self, seed):
        args = stencil_inputs(np.random.default_rng(seed))
        c_py, k_py, r_py = _kernels_py.stencil_batch(*args)
        c_cy, k_cy, r_cy = _compiled.stencil_batch(*args)
        scale = np.abs(c_py).max(axis=1, keepdims=True)
        np.testing.assert_allclose(np.asarray(c_cy) / scale, c_py / scale, atol=1e-11)
        np.testing.assert_allclose(np.asarray(k_cy), k_py, rtol=1e-8)
        np.testing.assert_array_equal(np.asarray(r_cy), r_py)

    def test_stencil_reduced_basis(self):
        offsets = np.array([0, 4])
        dx, dy = np.array([-1.0, 1.0, 0.0, 0.0]), np.array([0.0, 0.0, -1.0, 1.0])
        c_py, _, r_py = _kernels_py.stencil_batch(offsets, dx, dy, np.ones(4))
        c_cy, _, r_cy = _compiled.stencil_batch(offsets, dx, dy, np.ones(4))
        assert r_py[0] == r_cy[0] == 1
        np.testing.assert_allclose(np.asarray(c_cy), c_py, atol=1e-13)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_pair_flux(self, seed):
        pi, pj, args, size = flux_inputs(np.random.default_rng(seed))
        py = run_flux(_kernels_py, pi, pj, args, size)
        cy = run_flux(_compiled, pi, pj, args, size)
        np.testing.assert_allclose(cy[0], py[0], rtol=1e-13, atol=1e-13)
        np.testing.assert_array_equal(cy[1], py[1])
        ok = py[1] >= 0
        np.testing.assert_array_equal(cy[2][ok], py[2][ok])
        np.testing.assert_allclose(cy[3][ok], py[3][ok], rtol=1e-13, atol=1e-13)
        np.testing.assert_array_equal(cy[4], py[4])
        np.testing.assert_array_equal(cy[5], py[5])
