"""Compiled and numpy backends must agree, and both must match loop oracles."""
import math

import numpy as np
import pytest

from mcdgln import _kernels_py, kernels

try:
    from mcdgln import _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

BACKENDS = [pytest.param(_kernels_py, id="python"),
            pytest.param(_kernels_c, id="compiled",
                         marks=pytest.mark.skipif(_kernels_c is None, reason="extension not built"))]


def loop_cross_conv(E, W):
    out = np.zeros(E.shape)
    *lead, K, M, _ = E.shape
    for idx in np.ndindex(*lead, K):
        c = idx[-1]
        for i in range(M):
            for j in range(M):
                out[idx + (i, j)] = sum(E[idx + (i, m)] * W[c, i, m] for m in range(M)) + \
                    sum(E[idx + (n, j)] * W[c, n, j] for n in range(M))
    return out


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")


@pytest.mark.parametrize("mod", BACKENDS)
def test_cross_conv_forward(mod, rng):
    E, W = rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(3, 5, 5))
    np.testing.assert_allclose(mod.cross_conv_forward(E, W), loop_cross_conv(E, W), atol=1e-12, rtol=0)


@pytest.mark.parametrize("mod", BACKENDS)
def test_cross_conv_backward_is_adjoint(mod, rng):
    E, W = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(3, 4, 4))
    G = rng.normal(size=E.shape)
    gE, gW = mod.cross_conv_backward(G, E, W)
    # <G, f(E)> is linear in E, so <gE, dE> must equal <G, f(dE)>
    dE = rng.normal(size=E.shape)
    assert abs((gE * dE).sum() - (G * mod.cross_conv_forward(dE, W)).sum()) < 1e-10
    dW = rng.normal(size=W.shape)
    assert abs((gW * dW).sum() - (G * mod.cross_conv_forward(E, dW)).sum()) < 1e-10


@pytest.mark.parametrize("mod", BACKENDS)
def test_windowed_pcc(mod, rng):
    X = rng.normal(size=(5, 40))
    corr, ss = mod.windowed_pcc(X, 12, 7)
    assert corr.shape == (5, 5, 5)
    for k in range(5):
        seg = X[:, 7 * k:7 * k + 12]
        np.testing.assert_allclose(corr[k], np.corrcoef(seg), atol=1e-12)
        np.testing.assert_allclose(ss[k], ((seg - seg.mean(1, keepdims=True)) ** 2).sum(1), rtol=1e-12)
        assert np.array_equal(corr[k], corr[k].T)
        assert np.all(np.diag(corr[k]) == 1.0)


@pytest.mark.skipif(_kernels_c is None, reason="extension not built")
def test_backends_agree(rng):
    E, W, G = rng.normal(size=(4, 6, 6)), rng.normal(size=(4, 6, 6)), rng.normal(size=(4, 6, 6))
    np.testing.assert_allclose(_kernels_c.cross_conv_forward(E, W), _kernels_py.cross_conv_forward(E, W),
                               atol=1e-13)
    for a, b in zip(_kernels_c.cross_conv_backward(G, E, W), _kernels_py.cross_conv_backward(G, E, W)):
        np.testing.assert_allclose(a, b, atol=1e-13)
    X = rng.normal(size=(6, 50))
    for a, b in zip(_kernels_c.windowed_pcc(X, 20, 5), _kernels_py.windowed_pcc(X, 20, 5)):
        np.testing.assert_allclose(a, b, atol=1e-13)
    a_, b_, x_ = rng.uniform(0.5, 30, 200), rng.uniform(0.5, 30, 200), rng.uniform(0, 1, 200)
    np.testing.assert_allclose(_kernels_c.betainc(a_, b_, x_), _kernels_py.betainc(a_, b_, x_),
                               atol=1e-14)


@pytest.mark.parametrize("mod", BACKENDS)
def test_betainc_against_mpmath(mod, rng):
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 40
    a_, b_, x_ = rng.uniform(0.1, 60, 150), rng.uniform(0.1, 60, 150), rng.uniform(0, 1, 150)
    got = mod.betainc(a_, b_, x_)
    for a, b, x, g in zip(a_, b_, x_, got):
        ref = float(mpmath.betainc(a, b, 0, x, regularized=True))
        assert abs(g - ref) < 1e-10, (a, b, x)


@pytest.mark.parametrize("mod", BACKENDS)
def test_betainc_endpoints(mod):
    out = mod.betainc(np.array([2.0, 2.0]), np.array([3.0, 3.0]), np.array([0.0, 1.0]))
    assert list(out) == [0.0, 1.0]


@pytest.mark.parametrize("mod", BACKENDS)
def test_betainc_closed_form(mod):
    # I_x(1, b) = 1 - (1 - x)^b
    x = np.linspace(0.01, 0.99, 25)
    got = mod.betainc(np.ones(25), np.full(25, 3.5), x)
    np.testing.assert_allclose(got, 1 - (1 - x) ** 3.5, atol=1e-14)
    assert math.isclose(mod.betainc(np.array([0.5]), np.array([0.5]), np.array([0.5]))[0], 0.5,
                        abs_tol=1e-14)


def test_env_forces_fallback():
    import os
    import subprocess
    import sys

    env = dict(os.environ, MCDGLN_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from mcdgln import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_benchmark_script_runs():
    import subprocess
    import sys
    from pathlib import Path

    script = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    out = subprocess.run([sys.executable, str(script), "--repeat", "1"], capture_output=True, text=True,
                         check=True)
    assert "cross_conv_forward" in out.stdout
