"""Pure numpy fallback for the compiled kernels in ``_mmd_ext.pyx``."""
import numpy as np

# rows of the pairwise block processed at once; bounds temporaries to ~CHUNK * m doubles
CHUNK = 256


def _pair_sums(x, y, bw, want_grad):
    inv2s2 = 1.0 / (2.0 * bw * bw)
    invs2 = 1.0 / (bw * bw)
    total = 0.0
    grad = np.zeros(x.shape[0]) if want_grad else None
    for start in range(0, x.shape[0], CHUNK):
        d = x[start:start + CHUNK, None] - y[None, :]
        d2 = d * d
        dk = np.zeros_like(d) if want_grad else None
        for s in range(bw.shape[0]):
            kv = np.exp(-d2 * inv2s2[s])
            total += kv.sum()
            if want_grad:
                dk -= kv * d * invs2[s]
        if want_grad:
            grad[start:start + CHUNK] = dk.sum(axis=1)
    return total, grad


def mmd2_grad(a, b, bandwidths, want_grad=True):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    bw = np.ascontiguousarray(bandwidths, dtype=np.float64)
    n, m = a.shape[0], b.shape[0]
    saa, gaa = _pair_sums(a, a, bw, want_grad)
    sbb, _ = _pair_sums(b, b, bw, False)
    sab, gab = _pair_sums(a, b, bw, want_grad)
    value = saa / (n * n) + sbb / (m * m) - 2.0 * sab / (n * m)
    if not want_grad:
        return value, None
    # d/da_i of the aa block picks up both (i, j) and (j, i) terms
    return value, (2.0 / (n * n)) * gaa - (2.0 / (n * m)) * gab


def median_abs_diff(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        return 0.0
    iu, ju = np.triu_indices(n, k=1)
    return float(np.median(np.abs(x[iu] - x[ju])))
