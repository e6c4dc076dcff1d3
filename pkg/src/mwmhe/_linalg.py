"""Small dense helpers for symmetric positive definite matrices.

All SPD inversions go through a Cholesky factorization. A single retry with
diagonal jitter ``1e-12 * trace / n`` is allowed before giving up.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg as sla

from .errors import SingularUpdateError


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def cho_factor(P: np.ndarray, what: str = "matrix", strict: bool = False):
    """Cholesky factor of ``P``, with one jittered retry.

    With ``strict`` the retry only counts when the jittered factor does not
    owe its positivity to the jitter, so exactly singular matrices still fail.
    """
    P = np.asarray(P, dtype=float)
    try:
        return sla.cho_factor(P, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        pass
    n = P.shape[0]
    jitter = 1e-12 * max(np.trace(P), 0.0) / max(n, 1)
    try:
        fac = sla.cho_factor(P + jitter * np.eye(n), lower=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularUpdateError(f"{what} is not positive definite") from exc
    if strict and np.min(np.diag(fac[0]) ** 2) <= 100.0 * jitter:
        raise SingularUpdateError(f"{what} is singular")
    return fac


def spd_solve(P: np.ndarray, b: np.ndarray, what: str = "matrix",
              strict: bool = False) -> np.ndarray:
    """Solve ``P x = b`` for SPD ``P``."""
    return sla.cho_solve(cho_factor(P, what, strict), b, check_finite=False)


def spd_inv(P: np.ndarray, what: str = "matrix", strict: bool = False) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    return symmetrize(spd_solve(P, np.eye(P.shape[0]), what, strict))


def wnorm2(z: np.ndarray, W: np.ndarray) -> float:
    """Inverse-weighted squared norm ``z' W^{-1} z``."""
    z = np.asarray(z, dtype=float)
    return float(z @ spd_solve(W, z))


def is_spd(P: np.ndarray, tol: float = 0.0) -> bool:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        return False
    if not np.allclose(P, P.T, rtol=1e-10, atol=1e-12 * (1 + np.abs(P).max(initial=0.0))):
        return False
    return bool(np.linalg.eigvalsh(symmetrize(P)).min(initial=np.inf) > tol)


def numerical_rank(M: np.ndarray) -> tuple[int, np.ndarray]:
    """Rank with the ``max(dim) * sigma_max * 1e-12`` cutoff, plus singular values."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0, np.zeros(0)
    sv = np.linalg.svd(M, compute_uv=False)
    cutoff = max(M.shape) * (sv[0] if sv.size else 0.0) * 1e-12
    return int(np.sum(sv > cutoff)), sv
