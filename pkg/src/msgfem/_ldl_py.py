"""Pure numpy fallback for the band LDL^T kernels in ``_ldl_core.pyx``.

Same storage convention and same return semantics; used when the compiled
extension is unavailable or ``MSGFEM_PURE_PYTHON`` is set.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def band_ldl_factor(band, pivot_tol):
    n, w = band.shape
    bw = w - 1
    flat = band.reshape(-1)
    item = flat.itemsize
    for j in range(n):
        d = band[j, 0]
        if not d > pivot_tol:
            return j
        kmax = min(bw, n - 1 - j)
        if kmax == 0:
            continue
        l = band[j, 1:kmax + 1] / d
        band[j, 1:kmax + 1] = l
        # view[s, r] aliases band[j + 1 + s, r - s]; only r >= s is written
        base = (j + 1) * w
        view = as_strided(flat[base:], shape=(kmax, kmax), strides=(bw * item, item))
        view -= np.triu(np.outer(d * l, l))
    return -1


def band_ldl_solve(band, x):
    n, w = band.shape
    bw = w - 1
    for j in range(n):
        kmax = min(bw, n - 1 - j)
        if kmax:
            x[j + 1:j + kmax + 1] -= np.outer(band[j, 1:kmax + 1], x[j])
    x /= band[:, :1]
    for j in range(n - 1, -1, -1):
        kmax = min(bw, n - 1 - j)
        if kmax:
            x[j] -= band[j, 1:kmax + 1] @ x[j + 1:j + kmax + 1]
