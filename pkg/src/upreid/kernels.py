"""Hot numeric kernels with a compiled backend and a numpy fallback.

The Cython extension ``upreid._mmd_ext`` is used when it was built; otherwise
(or when ``UPREID_PURE_PYTHON`` is set) the numpy implementation in
``upreid._mmd_py`` is used. Both expose the same two functions:

``mmd2_grad(a, b, bandwidths, want_grad=True) -> (value, grad_a | None)``
    Biased (V-statistic) squared MMD between two scalar samples under a sum
    of Gaussian kernels ``exp(-(x - y)**2 / (2 * sigma**2))``.
``median_abs_diff(x) -> float``
    Median absolute difference over all unordered pairs of ``x``.
"""
import os

from upreid import _mmd_py

if os.environ.get("UPREID_PURE_PYTHON"):
    _impl = _mmd_py
else:
    try:
        from upreid import _mmd_ext as _impl
    except ImportError:  # extension not built
        _impl = _mmd_py

BACKEND = "cython" if _impl is not _mmd_py else "python"

mmd2_grad = _impl.mmd2_grad
median_abs_diff = _impl.median_abs_diff


def backends():
    """Map of backend name to module, for tests and benchmarks."""
    out = {"python": _mmd_py}
    try:
        from upreid import _mmd_ext
    except ImportError:
        pass
    else:
        out["cython"] = _mmd_ext
    return out
