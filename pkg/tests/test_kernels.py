"""The compiled kernels and the numpy fallback must agree bit for bit."""

import os
import subprocess
import sys

import numpy as np
import pytest

from rmlmc import _kernels_py as py
from rmlmc import kernels

cy = pytest.importorskip("rmlmc._kernels")


def _scalar_case(kind, params, meshes, rows, f, chunk, seed):
    rng = np.random.default_rng(seed)
    slot = np.full(f + 1, -1, dtype=np.int64)
    for c, mesh in enumerate(meshes):
        slot[mesh] = c
    outs = []
    for mod in (cy, py):
        x = np.full((rows, len(meshes)), 0.7)
        acc = np.zeros((rows, max(f, 1)))
        r = np.random.default_rng(seed)
        for step0 in range(0, 1 << f, chunk):
            dW = r.standard_normal((rows, min(chunk, (1 << f) - step0))) * 0.1
            mod.scalar_advance(kind, np.array(params), dW, f, step0, slot, acc, x, 1.0)
        outs.append(x)
    return outs


@pytest.mark.parametrize("kind,params", [(0, [0.05, 0.2]), (1, [5.0, 0.04, 0.25]), (2, [0.1])])
@pytest.mark.parametrize("meshes,f,chunk", [([0], 0, 1), ([3, 4], 4, 16), ([0, 2, 5], 5, 7), ([6], 6, 64)])
def test_scalar_advance_identical(kind, params, meshes, f, chunk):
    a, b = _scalar_case(kind, params, meshes, 33, f, chunk, 11)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("antithetic", [False, True])
@pytest.mark.parametrize("meshes,f,chunk", [([1, 2], 2, 4), ([3, 4], 4, 5), ([0, 5], 5, 32)])
def test_heston_advance_identical(antithetic, meshes, f, chunk):
    params = np.array([0.05, 5.0, 0.04, 0.25, -0.5])
    slot = np.full(f + 1, -1, dtype=np.int64)
    for c, mesh in enumerate(meshes):
        slot[mesh] = c
    outs = []
    for mod in (cy, py):
        rows = 29
        r = np.random.default_rng(4)
        s = np.ones((rows, len(meshes)))
        v = np.full((rows, len(meshes)), 0.04)
        acc1, acc2 = np.zeros((rows, f)), np.zeros((rows, f))
        anti = np.zeros((rows, 4))
        anti[:, 0], anti[:, 1] = 1.0, 0.04
        for step0 in range(0, 1 << f, chunk):
            c = min(chunk, (1 << f) - step0)
            dW1 = r.standard_normal((rows, c)) * 0.2
            dW2 = r.standard_normal((rows, c)) * 0.2
            mod.heston_advance(params, dW1, dW2, f, step0, slot, acc1, acc2, s, v, antithetic, anti, 1.0)
        outs.append((s, v, anti))
    for a, b in zip(*outs):
        assert np.array_equal(a, b)


def test_sweeps_identical():
    rng = np.random.default_rng(8)
    cdf = np.cumsum([0.3, 0.25, 0.2, 0.15])
    cdf = np.append(cdf, 1.0)
    u = rng.random((50, 37))
    assert np.array_equal(cy.sweep_counts(u, cdf), py.sweep_counts(u, cdf))
    off = rng.random(40)
    assert np.array_equal(cy.sweep_counts_shared(off, 37, cdf), py.sweep_counts_shared(off, 37, cdf))
    assert np.array_equal(cy.sweep_levels(u[0], cdf), py.sweep_levels(u[0], cdf))


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_forced_fallback_reproduces_a_report():
    code = ("from rmlmc.harness import ExperimentConfig, run_experiment, emit_report;"
            "from rmlmc import kernels;"
            "c = ExperimentConfig('gbm', 'single', 'str,iid', 200, 20, seed=3, pilot_samples=500);"
            "print(kernels.BACKEND); print(emit_report(run_experiment(c)))")
    out = {}
    for backend in ("python", "cython"):
        env = dict(os.environ, RMLMC_BACKEND=backend)
        res = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True)
        out[backend] = res.stdout.split("\n", 1)
        assert out[backend][0] == ("python" if backend == "python" else kernels.BACKEND)
    assert out["python"][1] == out["cython"][1]
