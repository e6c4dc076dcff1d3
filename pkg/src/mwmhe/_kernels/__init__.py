"""Banded linear-algebra kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``MWMHE_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the pure-Python twin is used. ``BACKEND`` names the active one.
"""
import os

import numpy as np

from . import _banded_py as python_backend

compiled_backend = None
try:
    from . import _banded as compiled_backend  # type: ignore[no-redef]
except ImportError:  # pragma: no cover - depends on build
    compiled_backend = None

if compiled_backend is not None and os.environ.get("MWMHE_PURE_PYTHON", "0") in ("", "0"):
    _impl = compiled_backend
    BACKEND = "compiled"
else:
    _impl = python_backend
    BACKEND = "python"


def band_cholesky(ab: np.ndarray, backend=None) -> int:
    """Factor ``ab`` (lower band storage, C-contiguous float64) in place."""
    return (backend or _impl).band_cholesky(ab)


def band_solve(L: np.ndarray, b: np.ndarray, backend=None) -> np.ndarray:
    """Return the solution of ``L L' x = b`` (``b`` is not modified)."""
    x = np.array(b, dtype=float, order="C", copy=True)
    vec = x.ndim == 1
    if vec:
        x = x.reshape(-1, 1)
    (backend or _impl).band_solve(L, x)
    return x[:, 0] if vec else x


def band_add_outer(ab, vals, starts, weights, backend=None) -> None:
    (backend or _impl).band_add_outer(
        ab,
        np.ascontiguousarray(vals, dtype=float),
        np.ascontiguousarray(starts, dtype=np.int_),
        np.ascontiguousarray(weights, dtype=float),
    )


def band_add_dense(ab, start: int, C, backend=None) -> None:
    """Add the dense symmetric block ``C`` to ``ab`` with its corner at ``start``."""
    (backend or _impl).band_add_dense(ab, int(start), np.ascontiguousarray(C, dtype=float))


def band_symv(ab, x, backend=None) -> np.ndarray:
    """Product of the symmetric band matrix ``ab`` with ``x``."""
    out = np.empty(ab.shape[1])
    (backend or _impl).band_symv(ab, np.ascontiguousarray(x, dtype=float), out)
    return out


def span_matvec(vals, starts, x, backend=None) -> np.ndarray:
    """``G x`` for rows stored as dense runs ``vals[r]`` starting at ``starts[r]``."""
    out = np.empty(vals.shape[0])
    if vals.shape[0] and vals.shape[1]:
        (backend or _impl).span_matvec(vals, starts, np.ascontiguousarray(x, dtype=float), out)
    else:
        out[:] = 0.0
    return out


def span_rmatvec(vals, starts, y, n: int, backend=None) -> np.ndarray:
    """``G' y`` for the same row storage; ``n`` is the column count."""
    out = np.zeros(n)
    if vals.shape[0] and vals.shape[1]:
        (backend or _impl).span_rmatvec(vals, starts, np.ascontiguousarray(y, dtype=float), out)
    return out


def dense_to_band(K: np.ndarray, p: int) -> np.ndarray:
    n = K.shape[0]
    ab = np.zeros((p + 1, n))
    for i in range(p + 1):
        ab[i, : n - i] = np.diagonal(K, -i)
    return ab


def band_to_dense(ab: np.ndarray) -> np.ndarray:
    p1, n = ab.shape
    K = np.zeros((n, n))
    for i in range(p1):
        idx = np.arange(n - i)
        K[idx + i, idx] = ab[i, : n - i]
        K[idx, idx + i] = ab[i, : n - i]
    return K
