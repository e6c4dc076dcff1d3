"""Descriptor Kalman filter and smoother recursions.

Weighted norms use the inverse convention ``||z||_W^2 = z' W^{-1} z`` so that
every weight is a covariance-like SPD matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._linalg import cho_factor, spd_inv, spd_solve, symmetrize, wnorm2
from .errors import DivergenceError, SelectionError, SingularUpdateError
from .model import DescriptorSystem, Prior
from scipy import linalg as sla


# --- fusion identities -----------------------------------------------------

def fuse_direct(z, P, y, M, S):
    """Complete the square in ``||x - z||_P^2 + ||y - M x||_S^2``.

    Returns ``(x1, Gamma1, Sigma)`` with the objective equal to
    ``||x - x1||_Gamma1^2 + ||y - M z||_Sigma^2``.
    """
    Sinv_M = spd_solve(S, M)
    Gamma = spd_inv(spd_inv(P) + M.T @ Sinv_M)
    x1 = z + Gamma @ (Sinv_M.T @ (y - M @ z))
    Sigma = symmetrize(M @ P @ M.T + S)
    return x1, Gamma, Sigma


def fuse_descriptor(E, z, P, y, M, S):
    """Complete the square in ``||E x - z||_P^2 + ||y - M x||_S^2``.

    Returns ``(x2, Gamma2, const)`` with the objective equal to
    ``||x - x2||_Gamma2^2 + const``.
    """
    Pinv_E = spd_solve(P, E)
    Sinv_M = spd_solve(S, M)
    info = symmetrize(E.T @ Pinv_E + M.T @ Sinv_M)
    try:
        Gamma = spd_inv(info, "information matrix E'P^-1E + M'S^-1M", strict=True)
    except SingularUpdateError as exc:
        raise SingularUpdateError(
            "measurement update is singular; [E; H] is numerically rank deficient"
        ) from exc
    x2 = Gamma @ (Pinv_E.T @ z + Sinv_M.T @ y)
    const = wnorm2(E @ x2 - z, P) + wnorm2(y - M @ x2, S)
    return x2, Gamma, const


# --- filter ------------------------------------------------------------------

@dataclass(frozen=True)
class FilterState:
    """Kalman quantities at time ``k``.

    ``P_minus`` is the weight of the *next* prediction, ``A P_plus A' + Q``.
    ``cost`` accumulates the constants dropped while completing squares; it
    equals the unconstrained full-information optimum up to time ``k``.
    """

    k: int
    x_plus: np.ndarray
    P_plus: np.ndarray
    P_minus: np.ndarray
    Gamma_sm: Optional[np.ndarray] = None
    cost: float = 0.0


@dataclass(frozen=True)
class SmootherMap:
    """Affine map ``x_{k+1} -> x_k`` of the unconstrained smoother."""

    base: np.ndarray      # filtered mean at k
    gain: np.ndarray      # Gamma A' Q^{-1} E
    offset: np.ndarray    # base - Gamma A' Q^{-1} (A base + B u)

    def __call__(self, x_next: np.ndarray) -> np.ndarray:
        return self.gain @ x_next + self.offset


class _SystemCache:
    """Per-system products reused by every recursion."""

    def __init__(self, sys: DescriptorSystem):
        self.sys = sys
        self.Qinv = spd_inv(sys.Q, "Q")
        self.Rinv = spd_inv(sys.R, "R")
        self.AtQinv = sys.A.T @ self.Qinv
        self.AtQinvA = symmetrize(self.AtQinv @ sys.A)
        self.AtQinvE = self.AtQinv @ sys.E
        self.HtRinv = sys.H.T @ self.Rinv
        self.HtRinvH = symmetrize(self.HtRinv @ sys.H)


_caches: dict = {}


def _cache(sys: DescriptorSystem) -> _SystemCache:
    c = _caches.get(id(sys))
    if c is None or c.sys is not sys:
        c = _SystemCache(sys)
        _caches[id(sys)] = c
        if len(_caches) > 64:
            _caches.pop(next(iter(_caches)))
    return c


def time_update(sys: DescriptorSystem, P_plus: np.ndarray) -> np.ndarray:
    return symmetrize(sys.A @ P_plus @ sys.A.T + sys.Q)


def predict(sys: DescriptorSystem, x_plus: np.ndarray, u) -> np.ndarray:
    """Anchor ``A x + B u`` of the next descriptor equation."""
    out = sys.A @ x_plus
    if sys.q:
        out = out + sys.B @ np.asarray(u, dtype=float).reshape(-1)
    return out


def measurement_update(sys: DescriptorSystem, x_prev, P_minus_prev, u_prev, y, *, return_cost=False):
    """Fuse the prediction from ``k-1`` with measurement ``y_k``."""
    z = predict(sys, np.asarray(x_prev, dtype=float), u_prev)
    x, P, const = fuse_descriptor(sys.E, z, P_minus_prev, np.asarray(y, dtype=float),
                                  sys.H, sys.R)
    if return_cost:
        return x, P, const
    return x, P


def smoother_params(sys: DescriptorSystem, x_plus, P_plus, u):
    """Return ``(Gamma_sm, SmootherMap)`` for time ``k``."""
    c = _cache(sys)
    Pinv = spd_inv(P_plus, "P_plus")
    Gamma = spd_inv(Pinv + c.AtQinvA, "smoother information")
    gain = Gamma @ c.AtQinvE
    offset = x_plus - Gamma @ (c.AtQinv @ predict(sys, x_plus, u))
    return Gamma, SmootherMap(np.asarray(x_plus, dtype=float), gain, offset)


class DescriptorKalmanFilter:
    """Sequential filter; ``states[k]`` holds the :class:`FilterState` at ``k``.

    Inputs are indexed by time (``u[k]`` drives ``x_k -> x_{k+1}``) and
    measurements likewise (``y[k]`` observes ``x_k``; ``y[0]`` is unused).
    """

    def __init__(self, sys: DescriptorSystem, prior: Prior):
        self.sys = sys
        self._c = _cache(sys)
        P0m = prior.predicted_weight(sys)
        self.states = [FilterState(0, prior.x0.copy(), prior.P0.copy(), P0m)]
        self._smooth: dict = {}

    @property
    def k(self) -> int:
        return self.states[-1].k

    def __getitem__(self, k: int) -> FilterState:
        return self.states[k]

    def step(self, u_prev, y) -> FilterState:
        s = self.states[-1]
        sys, c = self.sys, self._c
        z = predict(sys, s.x_plus, u_prev)
        PmE = spd_solve(s.P_minus, sys.E, "P_minus")
        info = symmetrize(sys.E.T @ PmE + c.HtRinvH)
        try:
            fac = cho_factor(info, "information matrix", strict=True)
        except SingularUpdateError as exc:
            raise SingularUpdateError(
                f"measurement update at k={s.k + 1} is singular; [E; H] is rank deficient"
            ) from exc
        y = np.asarray(y, dtype=float)
        x = sla.cho_solve(fac, PmE.T @ z + c.HtRinv @ y, check_finite=False)
        P = symmetrize(sla.cho_solve(fac, np.eye(sys.n), check_finite=False))
        inc = wnorm2(sys.E @ x - z, s.P_minus) + wnorm2(y - sys.H @ x, sys.R)
        new = FilterState(s.k + 1, x, P, time_update(sys, P), None, s.cost + inc)
        self.states.append(new)
        return new

    def run(self, inputs, ys, T: int) -> "DescriptorKalmanFilter":
        for k in range(self.k + 1, T + 1):
            self.step(_row(inputs, k - 1, self.sys.q), ys[k])
        return self

    def smoother(self, k: int, u_k) -> tuple[np.ndarray, SmootherMap]:
        hit = self._smooth.get(k)
        if hit is None:
            s = self.states[k]
            hit = smoother_params(self.sys, s.x_plus, s.P_plus, u_k)
            self._smooth[k] = hit
        return hit

    def forget_before(self, k: int) -> None:
        """Drop cached smoother data for times earlier than ``k``."""
        for key in [key for key in self._smooth if key < k]:
            del self._smooth[key]


def _row(arr, k, width):
    if width == 0 or arr is None:
        return np.zeros(width)
    return np.asarray(arr[k], dtype=float).reshape(-1)


def kalman_filter(sys, prior, inputs, ys, T) -> np.ndarray:
    """Filtered means ``x_k^+`` for ``k = 0..T`` stacked row-wise."""
    kf = DescriptorKalmanFilter(sys, prior).run(inputs, ys, T)
    return np.array([s.x_plus for s in kf.states])


# --- steady state --------------------------------------------------------------

@dataclass(frozen=True)
class RiccatiSolution:
    P_plus: np.ndarray
    P_minus: np.ndarray
    Gamma_sm: np.ndarray
    iterations: int
    residual: float
    history: tuple = field(default=(), repr=False)


def _riccati_map(sys, c, P):
    Pm = time_update(sys, P)
    info = symmetrize(sys.E.T @ spd_solve(Pm, sys.E) + c.HtRinvH)
    return spd_inv(info, "Riccati information matrix")


def riccati_steady_state(sys: DescriptorSystem, P0=None, tol: float = 1e-11,
                         max_iter: int = 10000, keep_history: bool = False) -> RiccatiSolution:
    """Iterate the filter covariance recursion to its fixed point.

    Raises :class:`DivergenceError` when the iteration blows up or does not
    settle within ``max_iter`` steps; this is the practical symptom of a
    system that is not detectable/stabilizable.
    """
    c = _cache(sys)
    P = np.eye(sys.n) if P0 is None else symmetrize(np.asarray(P0, dtype=float))
    hist = []
    for it in range(1, max_iter + 1):
        try:
            P_new = _riccati_map(sys, c, P)
        except SingularUpdateError as exc:
            raise DivergenceError(f"Riccati iteration broke down at step {it}") from exc
        if not np.all(np.isfinite(P_new)) or np.abs(P_new).max() > 1e15:
            raise DivergenceError(f"Riccati iteration diverged at step {it}")
        diff = np.linalg.norm(P_new - P)
        if keep_history:
            hist.append(P_new)
        if diff <= tol * (1.0 + np.linalg.norm(P)):
            P = P_new
            break
        P = P_new
    else:
        raise DivergenceError(
            f"Riccati iteration did not converge in {max_iter} steps "
            f"(last change {diff:.3e}); system may not be detectable/stabilizable"
        )
    residual = float(np.linalg.norm(_riccati_map(sys, c, P) - P))
    Pm = time_update(sys, P)
    Gamma = spd_inv(spd_inv(P) + c.AtQinvA)
    return RiccatiSolution(P, Pm, Gamma, it, residual, tuple(hist))


def coupling_matrix(sys: DescriptorSystem, Gamma_sm: np.ndarray) -> np.ndarray:
    """``Gamma A' Q^{-1} E``, the one-step smoother gain."""
    return Gamma_sm @ _cache(sys).AtQinvE



# --- propagator --------------------------------------------------------------

@dataclass(frozen=True)
class Propagator:
    """Backward composition of smoother maps over an unconstrained stretch.

    After ``q - 1`` advances starting at time ``b + 1`` it represents

        x_{b+1} = M x_{b+q} + offset + e,    e ~ weight

    where ``M = M_q``, ``offset = sum_i M_i r_i`` and
    ``weight = sum_i M_i Gamma_i M_i'``.
    """

    M: np.ndarray
    offset: np.ndarray
    weight: np.ndarray
    q: int = 1
    start: int = 0
    last_r: Optional[np.ndarray] = None

    @classmethod
    def identity(cls, n: int, start: int = 0) -> "Propagator":
        return cls(np.eye(n), np.zeros(n), np.zeros((n, n)), 1, start, None)

    @property
    def head(self) -> int:
        """Time index of the state that ``M`` multiplies."""
        return self.start + self.q - 1


def propagator_advance(prop: Propagator, sys: DescriptorSystem, Gamma_sm, x_plus, u) -> Propagator:
    """Absorb one more smoother map (the one at time ``prop.head``)."""
    c = _cache(sys)
    gain = Gamma_sm @ c.AtQinvE
    r = x_plus - Gamma_sm @ (c.AtQinv @ predict(sys, x_plus, u))
    return Propagator(
        M=prop.M @ gain,
        offset=prop.offset + prop.M @ r,
        weight=symmetrize(prop.weight + prop.M @ Gamma_sm @ prop.M.T),
        q=prop.q + 1,
        start=prop.start,
        last_r=r,
    )


def coupling_norm(Gamma_sm: np.ndarray, M: np.ndarray) -> float:
    """Induced 2-norm of ``Gamma^{-1} M``."""
    X = spd_solve(Gamma_sm, np.asarray(M, dtype=float), "Gamma_sm")
    if not np.any(X):
        return 0.0
    return float(np.linalg.svd(X, compute_uv=False)[0])


def coupling_norms(sys: DescriptorSystem, q_max: int, riccati: Optional[RiccatiSolution] = None):
    """Steady-state ``||Gamma^{-1} G^q||`` for ``q = 0..q_max``."""
    sol = riccati or riccati_steady_state(sys)
    G = coupling_matrix(sys, sol.Gamma_sm)
    out = np.empty(q_max + 1)
    Mq = np.eye(sys.n)
    for q in range(q_max + 1):
        out[q] = coupling_norm(sol.Gamma_sm, Mq)
        Mq = Mq @ G
    return out


def select_horizon(sys: DescriptorSystem, U: float, q_max: int = 1000,
                   riccati: Optional[RiccatiSolution] = None) -> int:
    """Smallest lag ``q >= 1`` whose steady-state coupling norm is at most ``U``."""
    norms = coupling_norms(sys, q_max, riccati)
    if U <= 0:
        raise SelectionError(U, q_max, float(norms[-1]))
    hits = np.nonzero(norms[1:] <= U)[0]
    if hits.size == 0:
        raise SelectionError(U, q_max, float(norms[-1]))
    return int(hits[0] + 1)
