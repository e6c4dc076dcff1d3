"""Mehrotra predictor-corrector interior point method for :class:`QPProblem`.

Each Newton step factors ``H + G' diag(lam/s) G`` with the banded Cholesky
kernel, so the cost per iteration is linear in the number of stages.
Problems with equality constraints take a dense KKT path instead.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg as sla

from .._kernels import band_add_outer, band_cholesky, band_solve, band_to_dense
from ..errors import InfeasibleProblemError, MaxIterationsError, NumericalFailureError
from .problem import QPProblem


@dataclass
class SolverSettings:
    tol: float = 1e-9
    comp_tol: float = 1e-13
    max_iter: int = 100
    step_fraction: float = 0.99
    sigma_min: float = 0.05
    sigma_max: float = 0.95


@dataclass
class QPSolution:
    x: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    slack: np.ndarray
    objective: float
    residuals: dict
    iterations: int
    wall_time: float
    status: str = "optimal"
    history: list = field(default_factory=list, repr=False)

    def kkt_ok(self, tol: float) -> bool:
        return all(v <= tol for v in self.residuals.values())


def kkt_residuals(p: QPProblem, x, nu, lam) -> dict:
    """Scaled residuals of the optimality conditions at ``(x, nu, lam)``."""
    Hx = p.hess_mv(x)
    Gtl = p.G_rmv(lam) if p.n_ineq else np.zeros_like(x)
    Atn = p.A_eq.T @ nu if p.n_eq else np.zeros_like(x)
    rd = Hx + p.f + Atn + Gtl
    scale_d = 1.0 + max(_inf(Hx), _inf(p.f), _inf(Gtl), _inf(Atn))
    out = {"stationarity": _inf(rd) / scale_d}
    if p.n_eq:
        Ax = p.A_eq @ x
        out["equality"] = _inf(Ax - p.b_eq) / (1.0 + max(_inf(Ax), _inf(p.b_eq)))
    else:
        out["equality"] = 0.0
    if p.n_ineq:
        Gx = p.G_mv(x)
        gap = p.h - Gx
        obj = abs(p.objective(x))
        out["inequality"] = float(np.max(np.maximum(-gap, 0.0))) / (1.0 + max(_inf(Gx), _inf(p.h)))
        out["dual_feasibility"] = float(np.max(np.maximum(-lam, 0.0)))
        out["complementarity"] = abs(float(lam @ gap)) / (1.0 + obj)
    else:
        out.update(inequality=0.0, dual_feasibility=0.0, complementarity=0.0)
    return out


def _inf(v) -> float:
    if isinstance(v, np.ndarray):
        return float(np.abs(v).max()) if v.size else 0.0
    return abs(float(v))


class _Newton:
    """Factorization of the reduced Newton matrix for one iterate."""

    def __init__(self, p: QPProblem, D: Optional[np.ndarray]):
        ab = np.array(p.H_band, order="C", copy=True)
        if D is not None and D.size:
            band_add_outer(ab, p.G_vals, p.G_starts, D)
        self.eq = p.n_eq > 0
        if not self.eq:
            info = band_cholesky(ab)
            if info:
                # one retry with jitter proportional to the diagonal scale
                ab = np.array(p.H_band, order="C", copy=True)
                if D is not None and D.size:
                    band_add_outer(ab, p.G_vals, p.G_starts, D)
                ab[0] += 1e-12 * (1.0 + np.abs(ab[0]).max())
                if band_cholesky(ab):
                    raise NumericalFailureError(
                        f"Newton matrix is not positive definite (pivot {info - 1})"
                    )
            self.L = ab
        else:
            K = band_to_dense(ab)
            n, me = K.shape[0], p.n_eq
            kkt = np.zeros((n + me, n + me))
            kkt[:n, :n] = K
            kkt[:n, n:] = p.A_eq.T
            kkt[n:, :n] = p.A_eq
            try:
                self.lu = sla.lu_factor(kkt, check_finite=False)
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise NumericalFailureError("KKT matrix factorization failed") from exc
            if not np.all(np.isfinite(self.lu[0])) or np.min(np.abs(np.diag(self.lu[0]))) == 0.0:
                raise NumericalFailureError("KKT matrix is singular")
            self.n = n

    def solve(self, r1, r2):
        if not self.eq:
            return band_solve(self.L, r1), np.zeros(0)
        sol = sla.lu_solve(self.lu, np.concatenate([r1, r2]), check_finite=False)
        return sol[: self.n], sol[self.n:]


def _max_step(v, dv) -> float:
    return min(1.0, _step_to_boundary(v, dv))


def solve(p: QPProblem, settings: Optional[SolverSettings] = None) -> QPSolution:
    """Minimize the problem to KKT residuals below ``settings.tol``."""
    st = settings or SolverSettings()
    t0 = time.perf_counter()
    n, m, me = p.n, p.n_ineq, p.n_eq

    if m == 0:
        newton = _Newton(p, None)
        dx, dnu = newton.solve(-p.f, p.b_eq)
        x, nu = dx, dnu
        res = kkt_residuals(p, x, nu, np.zeros(0))
        return QPSolution(x, nu, np.zeros(0), np.zeros(0), p.residual_objective(x), res, 1,
                          time.perf_counter() - t0)

    # initial point: solve with unit barrier weights, then push slacks inside
    newton = _Newton(p, np.ones(m))
    x, nu = newton.solve(-p.f + p.G_rmv(p.h), p.b_eq)
    s = p.h - p.G_mv(x)
    lam = np.ones(m)
    s = np.maximum(np.abs(s), 1.0)

    history = []
    pin_hist = []
    for it in range(1, st.max_iter + 1):
        Hx = p.hess_mv(x)
        Gtl = p.G_rmv(lam)
        Atn = p.A_eq.T @ nu if me else 0.0
        rd = Hx + p.f + Atn + Gtl
        re = p.A_eq @ x - p.b_eq if me else np.zeros(0)
        Gx = p.G_mv(x)
        ri = Gx + s - p.h
        mu = float(s @ lam) / m
        obj = float(0.5 * x @ Hx + p.f @ x + p.c0)

        stat = _inf(rd) / (1.0 + max(_inf(Hx), _inf(p.f), _inf(Gtl), _inf(Atn)))
        peq = _inf(re) / (1.0 + max(_inf(p.A_eq @ x) if me else 0.0, _inf(p.b_eq)))
        pin = _inf(ri) / (1.0 + max(_inf(Gx), _inf(p.h)))
        comp = float(s @ lam) / (1.0 + abs(obj))
        history.append((stat, peq, pin, comp))
        if stat <= st.tol and peq <= st.tol and pin <= st.tol and comp <= st.comp_tol:
            res = kkt_residuals(p, x, nu, lam)
            return QPSolution(x, nu, lam, s, p.residual_objective(x), res, it - 1,
                              time.perf_counter() - t0, "optimal", history)

        pin_hist.append(pin)
        if it > 15 and pin > 1e-6 and lam.max() > 1e10 and pin >= 0.9 * min(pin_hist[-10:]):
            raise InfeasibleProblemError(
                f"primal residual stalled at {pin:.3e} while duals grow ({lam.max():.3e})"
            )

        D = lam / s
        newton = _Newton(p, D)

        def direction(rc):
            rhs = -rd + p.G_rmv((rc - lam * ri) / s)
            dx, dnu = newton.solve(rhs, -re)
            ds = -ri - p.G_mv(dx)
            dl = -(rc + lam * ds) / s
            return dx, dnu, ds, dl

        # predictor
        rc = s * lam
        dx_a, _, ds_a, dl_a = direction(rc)
        a_aff = min(_max_step(s, ds_a), _max_step(lam, dl_a))
        mu_aff = float((s + a_aff * ds_a) @ (lam + a_aff * dl_a)) / m
        sigma = min(st.sigma_max, max(st.sigma_min, (mu_aff / mu) ** 3)) if mu > 0 else st.sigma_min
        # corrector
        rc = s * lam + ds_a * dl_a - sigma * mu
        dx, dnu, ds, dl = direction(rc)
        alpha = min(1.0, st.step_fraction * min(_step_to_boundary(s, ds),
                                                _step_to_boundary(lam, dl)))
        x = x + alpha * dx
        if me:
            nu = nu + alpha * dnu
        s = s + alpha * ds
        lam = lam + alpha * dl
        if not (np.all(np.isfinite(x)) and np.all(s > 0) and np.all(lam > 0)):
            raise NumericalFailureError(f"iterate left the interior at iteration {it}")

    raise MaxIterationsError(
        f"no convergence in {st.max_iter} iterations "
        f"(stationarity {stat:.2e}, feasibility {pin:.2e}, complementarity {comp:.2e})"
    )


def _step_to_boundary(v, dv) -> float:
    neg = dv < 0
    if not neg.any():
        return np.inf
    return float((-v[neg] / dv[neg]).min())
