# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled band LDL^T kernels.

Storage convention (shared with ``_ldl_py``): ``band[j, k] = A[j + k, j]`` for
``0 <= k <= bw``; column ``j`` of the lower triangle is row ``j`` of ``band``.
After factorization ``band[j, 0]`` holds ``D[j]`` and ``band[j, k]`` holds
``L[j + k, j]``.
"""

from libc.math cimport fabs


def band_ldl_factor(double[:, ::1] band, double pivot_tol):
    """Factor in place. Returns -1 on success, else the index of the bad pivot."""
    cdef Py_ssize_t n = band.shape[0]
    cdef Py_ssize_t bw = band.shape[1] - 1
    cdef Py_ssize_t j, k, r, s, kmax
    cdef double d, ls, f
    cdef Py_ssize_t bad = -1
    with nogil:
        for j in range(n):
            d = band[j, 0]
            if d <= pivot_tol or d != d:
                bad = j
                break
            kmax = bw
            if j + kmax > n - 1:
                kmax = n - 1 - j
            for k in range(1, kmax + 1):
                band[j, k] = band[j, k] / d
            for s in range(1, kmax + 1):
                ls = band[j, s]
                if ls == 0.0:
                    continue
                f = d * ls
                for r in range(s, kmax + 1):
                    band[j + s, r - s] -= f * band[j, r]
    return bad


def band_ldl_solve(const double[:, ::1] band, double[:, ::1] x):
    """Solve L D L^T y = x in place for every column of ``x``."""
    cdef Py_ssize_t n = band.shape[0]
    cdef Py_ssize_t bw = band.shape[1] - 1
    cdef Py_ssize_t m = x.shape[1]
    cdef Py_ssize_t j, k, c, kmax
    cdef double l, acc, dinv
    with nogil:
        for j in range(n):
            kmax = bw
            if j + kmax > n - 1:
                kmax = n - 1 - j
            for k in range(1, kmax + 1):
                l = band[j, k]
                if l == 0.0:
                    continue
                for c in range(m):
                    x[j + k, c] -= l * x[j, c]
        for j in range(n):
            dinv = 1.0 / band[j, 0]
            for c in range(m):
                x[j, c] *= dinv
        for j in range(n - 1, -1, -1):
            kmax = bw
            if j + kmax > n - 1:
                kmax = n - 1 - j
            for k in range(1, kmax + 1):
                l = band[j, k]
                if l == 0.0:
                    continue
                for c in range(m):
                    x[j, c] -= l * x[j + k, c]
