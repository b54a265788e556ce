import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from upreid import kernels

BACKENDS = kernels.backends()


def brute_mmd2(a, b, bw):
    k = lambda x, y: sum(np.exp(-(x - y) ** 2 / (2 * s * s)) for s in bw)
    aa = sum(k(x, y) for x in a for y in a) / len(a) ** 2
    bb = sum(k(x, y) for x in b for y in b) / len(b) ** 2
    ab = sum(k(x, y) for x in a for y in b) / (len(a) * len(b))
    return aa + bb - 2 * ab


def test_compiled_backend_available():
    # the build compiles the extension; the fallback is for environments without a compiler
    assert "cython" in BACKENDS
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("bw", [[0.3], [0.05, 0.1, 0.2], [0.2, 0.7]])
def test_mmd_matches_brute_force(name, bw):
    rng = np.random.default_rng(len(bw))
    a, b = rng.normal(size=17), rng.normal(size=11) + 0.3
    value, _ = BACKENDS[name].mmd2_grad(a, b, np.array(bw), want_grad=False)
    assert abs(value - brute_mmd2(a, b, bw)) < 1e-12


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_mmd_gradient_matches_finite_differences(name):
    rng = np.random.default_rng(0)
    a, b, bw = rng.normal(size=9), rng.normal(size=6), np.array([0.25, 0.5, 1.0])
    mod = BACKENDS[name]
    _, grad = mod.mmd2_grad(a, b, bw)
    eps = 1e-6
    for i in range(len(a)):
        d = np.zeros_like(a)
        d[i] = eps
        num = (mod.mmd2_grad(a + d, b, bw, False)[0] - mod.mmd2_grad(a - d, b, bw, False)[0]) / (2 * eps)
        assert abs(num - grad[i]) < 1e-8


@given(a=arrays(np.float64, st.integers(1, 40), elements=st.floats(-1, 1)),
       b=arrays(np.float64, st.integers(1, 40), elements=st.floats(-1, 1)),
       sigma=st.floats(0.01, 2.0))
def test_backends_agree(a, b, sigma):
    if len(BACKENDS) < 2:
        pytest.skip("single backend")
    bw = np.array([sigma / 2, sigma, 2 * sigma])
    v1, g1 = BACKENDS["python"].mmd2_grad(a, b, bw)
    v2, g2 = BACKENDS["cython"].mmd2_grad(a, b, bw)
    assert abs(v1 - v2) < 1e-10
    assert np.allclose(g1, g2, rtol=0, atol=1e-10)
    assert BACKENDS["python"].median_abs_diff(a) == BACKENDS["cython"].median_abs_diff(a)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_median_abs_diff(name):
    mod = BACKENDS[name]
    assert mod.median_abs_diff(np.array([0.0, 1.0, 3.0])) == 2.0
    assert mod.median_abs_diff(np.array([5.0])) == 0.0
    x = np.random.default_rng(1).normal(size=30)
    ref = np.median([abs(x[i] - x[j]) for i in range(30) for j in range(i + 1, 30)])
    assert mod.median_abs_diff(x) == ref


def test_pure_python_selected_by_env(monkeypatch):
    import importlib

    monkeypatch.setenv("UPREID_PURE_PYTHON", "1")
    try:
        mod = importlib.reload(kernels)
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("UPREID_PURE_PYTHON")
        importlib.reload(kernels)
