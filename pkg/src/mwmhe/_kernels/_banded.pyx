# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for symmetric banded systems in LAPACK lower band storage.

``ab[i, j]`` holds ``K[j + i, j]`` for ``0 <= i <= p``.
"""
from libc.math cimport sqrt


def band_cholesky(double[:, ::1] ab):
    """In-place lower Cholesky factor. Returns 0, or ``j + 1`` if pivot ``j`` failed."""
    cdef Py_ssize_t p = ab.shape[0] - 1
    cdef Py_ssize_t n = ab.shape[1]
    cdef Py_ssize_t j, i, kk, lim
    cdef double d, lkj
    for j in range(n):
        d = ab[0, j]
        if not d > 0.0:
            return j + 1
        d = sqrt(d)
        ab[0, j] = d
        lim = p if p < n - 1 - j else n - 1 - j
        for i in range(1, lim + 1):
            ab[i, j] /= d
        for kk in range(1, lim + 1):
            lkj = ab[kk, j]
            if lkj != 0.0:
                for i in range(kk, lim + 1):
                    ab[i - kk, j + kk] -= ab[i, j] * lkj
    return 0


def band_solve(double[:, ::1] L, double[:, ::1] b):
    """Solve ``L L' x = b`` in place for every column of ``b``."""
    cdef Py_ssize_t p = L.shape[0] - 1
    cdef Py_ssize_t n = L.shape[1]
    cdef Py_ssize_t nrhs = b.shape[1]
    cdef Py_ssize_t j, i, c, lim
    cdef double s
    for c in range(nrhs):
        for j in range(n):
            s = b[j, c] / L[0, j]
            b[j, c] = s
            lim = p if p < n - 1 - j else n - 1 - j
            for i in range(1, lim + 1):
                b[j + i, c] -= L[i, j] * s
        for j in range(n - 1, -1, -1):
            s = b[j, c]
            lim = p if p < n - 1 - j else n - 1 - j
            for i in range(1, lim + 1):
                s -= L[i, j] * b[j + i, c]
            b[j, c] = s / L[0, j]


def band_add_outer(double[:, ::1] ab, double[:, ::1] vals, long[::1] starts,
                   double[::1] weights):
    """``ab += sum_r weights[r] * g_r g_r'`` where row ``g_r`` is dense on
    columns ``starts[r] .. starts[r] + width``."""
    cdef Py_ssize_t m = vals.shape[0]
    cdef Py_ssize_t w = vals.shape[1]
    cdef Py_ssize_t r, a, bb, s0
    cdef double wr, va
    for r in range(m):
        wr = weights[r]
        if wr == 0.0:
            continue
        s0 = starts[r]
        for a in range(w):
            va = wr * vals[r, a]
            if va == 0.0:
                continue
            for bb in range(a + 1):
                ab[a - bb, s0 + bb] += va * vals[r, bb]


def band_symv(double[:, ::1] ab, double[::1] x, double[::1] out):
    """``out = K x`` for symmetric ``K`` in lower band storage."""
    cdef Py_ssize_t p = ab.shape[0] - 1
    cdef Py_ssize_t n = ab.shape[1]
    cdef Py_ssize_t j, i, lim
    cdef double a
    for j in range(n):
        out[j] = ab[0, j] * x[j]
    for j in range(n):
        lim = p if p < n - 1 - j else n - 1 - j
        for i in range(1, lim + 1):
            a = ab[i, j]
            out[j + i] += a * x[j]
            out[j] += a * x[j + i]


def span_matvec(double[:, ::1] vals, long[::1] starts, double[::1] x, double[::1] out):
    """``out[r] = vals[r] . x[starts[r] : starts[r] + width]``."""
    cdef Py_ssize_t m = vals.shape[0]
    cdef Py_ssize_t w = vals.shape[1]
    cdef Py_ssize_t r, a, s0
    cdef double acc
    for r in range(m):
        s0 = starts[r]
        acc = 0.0
        for a in range(w):
            acc += vals[r, a] * x[s0 + a]
        out[r] = acc


def span_rmatvec(double[:, ::1] vals, long[::1] starts, double[::1] y, double[::1] out):
    """``out = G' y`` accumulated into a zeroed ``out``."""
    cdef Py_ssize_t m = vals.shape[0]
    cdef Py_ssize_t w = vals.shape[1]
    cdef Py_ssize_t r, a, s0
    cdef double yr
    for r in range(m):
        yr = y[r]
        if yr == 0.0:
            continue
        s0 = starts[r]
        for a in range(w):
            out[s0 + a] += vals[r, a] * yr


def band_add_dense(double[:, ::1] ab, Py_ssize_t start, double[:, ::1] C):
    """``ab += C`` for a dense symmetric block placed at ``start`` on the diagonal."""
    cdef Py_ssize_t w = C.shape[0]
    cdef Py_ssize_t p = ab.shape[0] - 1
    cdef Py_ssize_t i, j, lim
    for j in range(w):
        lim = w - 1 - j
        if lim > p:
            lim = p
        for i in range(lim + 1):
            ab[i, start + j] += C[j + i, j]
