"""Sparse symmetric LDL^T factorization with a bandwidth-reducing ordering.

The numerical kernels live in a compiled extension (``msgfem._ldl_core``);
when it cannot be imported, or when the environment variable
``MSGFEM_PURE_PYTHON`` is set to a non-empty value other than ``0``, the numpy
implementation in ``msgfem._ldl_py`` is used instead.  ``BACKEND`` names the
active one.
"""

import os

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import _ldl_py


class FactorizationError(RuntimeError):
    """Raised when a pivot is non-positive or not finite."""


def _select_backend():
    if os.environ.get("MSGFEM_PURE_PYTHON", "") not in ("", "0"):
        return _ldl_py, "python"
    try:
        from . import _ldl_core
    except ImportError:
        return _ldl_py, "python"
    return _ldl_core, "cython"


_kernels, BACKEND = _select_backend()

KERNELS = {"python": _ldl_py}
if BACKEND == "cython":
    KERNELS["cython"] = _kernels


def bandwidth(A):
    """Half bandwidth max |i - j| over stored nonzeros of a sparse matrix."""
    A = sp.coo_matrix(A)
    if A.nnz == 0:
        return 0
    return int(np.max(np.abs(A.row - A.col)))


class BandLDL:
    """LDL^T of a symmetric positive definite sparse matrix.

    The matrix is permuted with reverse Cuthill-McKee, stored as a band, and
    factored without pivoting: ``P A P^T = L D L^T`` with ``L`` unit lower
    triangular.

    Parameters
    ----------
    A : sparse matrix
        Symmetric positive definite.
    ordering : {"rcm", "natural"}
    pivot_rtol : float
        A pivot ``d_j <= pivot_rtol * max|A|`` counts as breakdown.
    backend : {"cython", "python"}, optional
        Force a kernel; default is the module-level ``BACKEND``.
    """

    def __init__(self, A, ordering="rcm", pivot_rtol=1e-14, backend=None):
        A = sp.csr_matrix(A, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("matrix must be square")
        self.n = n
        if ordering == "rcm" and n > 0:
            perm = reverse_cuthill_mckee(A, symmetric_mode=True).astype(np.intp)
        elif ordering in ("rcm", "natural"):
            perm = np.arange(n, dtype=np.intp)
        else:
            raise ValueError(f"unknown ordering {ordering!r}")
        self.perm = perm
        self.iperm = np.empty_like(perm)
        self.iperm[perm] = np.arange(n, dtype=np.intp)
        Ap = sp.coo_matrix(A[perm][:, perm])
        lower = Ap.row >= Ap.col
        rows, cols, vals = Ap.row[lower], Ap.col[lower], Ap.data[lower]
        self.bw = int(np.max(rows - cols)) if rows.size else 0
        band = np.zeros((n, self.bw + 1))
        np.add.at(band, (cols, rows - cols), vals)
        self.scale = float(np.max(np.abs(A.data))) if A.nnz else 1.0
        self._kernels = KERNELS[backend] if backend else _kernels
        bad = self._kernels.band_ldl_factor(band, pivot_rtol * self.scale)
        if bad >= 0:
            raise FactorizationError(
                f"non-positive pivot {band[bad, 0]:.3e} at permuted row {bad} "
                f"(original row {perm[bad]})")
        self.band = band

    @property
    def D(self):
        return self.band[:, 0].copy()

    @property
    def L(self):
        """Unit lower triangular factor (permuted numbering) as CSC."""
        n, w = self.band.shape
        cols = np.repeat(np.arange(n), w - 1)
        offs = np.tile(np.arange(1, w), n)
        vals = self.band[:, 1:].reshape(-1)
        keep = (cols + offs < n) & (vals != 0.0)
        L = sp.coo_matrix((vals[keep], (cols[keep] + offs[keep], cols[keep])), shape=(n, n))
        return (L + sp.identity(n)).tocsc()

    def reconstruct(self):
        """``P^T L D L^T P`` as a sparse matrix in the original numbering."""
        L = self.L
        LDLt = L @ sp.diags(self.D) @ L.T
        return sp.csr_matrix(LDLt[self.iperm][:, self.iperm])

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        vec = b.ndim == 1
        x = np.ascontiguousarray(b.reshape(self.n, -1 if b.size else 1)[self.perm])
        if self.n:
            self._kernels.band_ldl_solve(self.band, x)
        out = x[self.iperm]
        return out[:, 0] if vec else out
