"""Quadratic terms and constraint rows shared by the estimators.

Every estimator here is a staged least-squares problem in the states
``x_k`` only; process and measurement noise are eliminated as affine
residuals of the model equations. Layout labels are the integer time indices,
registered in increasing order so the Hessian stays block tridiagonal.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .._linalg import spd_inv, symmetrize, wnorm2
from ..dkf import FilterState, Propagator, SmootherMap, predict
from ..errors import StructuralError
from ..model import ConstraintSet, DescriptorSystem, MeasurementRecord
from ..qp import LinearRows, QuadTerm, VariableLayout, active_set, assemble
from ..qp import solve as qp_solve
from .series import StepResult


@dataclass(frozen=True)
class ArrivalCost:
    """``||E x - z||^2_P`` summarizing everything before the window start."""

    z: np.ndarray
    P: np.ndarray
    E: np.ndarray

    def __call__(self, x: np.ndarray) -> float:
        return wnorm2(self.E @ np.asarray(x, dtype=float) - self.z, self.P)


def arrival_cost(sys: DescriptorSystem, state: FilterState, u) -> ArrivalCost:
    """Arrival cost anchored on the filter at ``state.k`` for window start ``state.k + 1``.

    The constant accumulated by the filter is left out; it does not move the
    minimizer and is added back when objectives are reported.
    """
    z = predict(sys, state.x_plus, u)
    return ArrivalCost(z, symmetrize(state.P_minus), sys.E)


def measurements(data) -> np.ndarray:
    """Measurement array ``(T+1, m)`` from a record or a raw array."""
    if isinstance(data, MeasurementRecord):
        return data.y
    y = np.asarray(data, dtype=float)
    if y.ndim != 2:
        raise StructuralError(f"measurements must be (T+1, m), got shape {y.shape}")
    return y


def input_series(sys: DescriptorSystem, inputs, T: int) -> np.ndarray:
    if sys.q == 0 or inputs is None:
        return np.zeros((T, sys.q))
    u = np.asarray(inputs, dtype=float).reshape(-1, sys.q)
    if u.shape[0] < T:
        raise StructuralError(f"need {T} input samples, got {u.shape[0]}")
    return u


class StageBuilder:
    """Factory for the terms of one system; caches the inverse weights."""

    def __init__(self, sys: DescriptorSystem, constraints: Optional[ConstraintSet] = None):
        self.sys = sys
        self.cons = constraints if constraints is not None else ConstraintSet.empty(sys.n)
        if self.cons.n_ineq and self.cons.n != sys.n:
            raise StructuralError(
                f"constraints act on {self.cons.n} states, system has {sys.n}"
            )
        self.Qinv = spd_inv(sys.Q, "Q")
        self.Rinv = spd_inv(sys.R, "R")
        self._negA = -sys.A
        self._negAc = -self.cons.Ac
        self._I = np.eye(sys.n)

    def register(self, layout: VariableLayout, times: Iterable[int]) -> None:
        for k in sorted(set(times)):
            if k not in layout:
                if layout.labels and k < layout.labels[-1]:
                    raise StructuralError(f"time {k} registered out of order")
                layout.add(k, self.sys.n)

    def dynamics(self, k: int, u_k) -> QuadTerm:
        """``||E x_{k+1} - A x_k - B u_k||^2_Q``."""
        g = predict(self.sys, np.zeros(self.sys.n), u_k)
        return QuadTerm({k: self._negA, k + 1: self.sys.E}, g, self.sys.Q,
                        ("dyn", k), self.Qinv)

    def measurement(self, k: int, y_k) -> QuadTerm:
        """``||y_k - H x_k||^2_R``."""
        return QuadTerm({k: self.sys.H}, np.asarray(y_k, dtype=float), self.sys.R,
                        ("meas", k), self.Rinv)

    def anchor(self, k: int, arrival: ArrivalCost) -> QuadTerm:
        return QuadTerm({k: self.sys.E}, arrival.z, arrival.P, ("arrival", k))

    def smoother(self, k: int, Gamma: np.ndarray, smap: SmootherMap,
                 Gamma_inv: Optional[np.ndarray] = None) -> QuadTerm:
        """``||x_k - G_k x_{k+1} - r_k||^2_Gamma``."""
        return QuadTerm({k: self._I, k + 1: -smap.gain}, smap.offset, Gamma,
                        ("smooth", k), Gamma_inv)

    def reduced(self, first: int, last: int, prop: Propagator) -> QuadTerm:
        """``||x_first - M x_last - offset||^2_W`` left by eliminating the states between."""
        return QuadTerm({first: self._I, last: -prop.M}, prop.offset, prop.weight,
                        ("reduced", first, last))

    def transition(self, k: int) -> LinearRows:
        """``Ec x_{k+1} - Ac x_k <= dc``."""
        return LinearRows({k: self._negAc, k + 1: self.cons.Ec}, self.cons.dc,
                          ("transition", k))

    def sliding(self, layout: VariableLayout, t0: int, T: int, arrival: ArrivalCost,
                ys: np.ndarray, u: np.ndarray):
        """Arrival term plus stage terms over ``x_{t0}..x_T`` and their transitions."""
        self.register(layout, range(t0, T + 1))
        terms = [self.anchor(t0, arrival)]
        for k in range(t0, T):
            terms.append(self.dynamics(k, u[k]))
        for k in range(t0, T + 1):
            terms.append(self.measurement(k, ys[k]))
        rows = [self.transition(k) for k in range(t0, T)] if self.cons.n_ineq else []
        return terms, rows


def solve_window(layout: VariableLayout, terms, rows, *, T: int, exit_index: int,
                 constant: float, settings=None, eps_act: float = 1e-6,
                 keep_states: bool = False, started: float):
    """Assemble and solve one estimator QP; returns ``(StepResult, problem, solution)``.

    ``started`` is the ``perf_counter`` stamp taken when the step began, so the
    reported wall time includes term construction.
    """
    problem = assemble(layout, terms, (), rows)
    sol = qp_solve(problem, settings)
    states = {k: layout.extract(sol.x, k).copy() for k in layout.labels}
    exit_tag = ("transition", exit_index)
    active = tuple(sorted(
        problem.row_tags[j][1] for j in active_set(sol, problem, eps_act)
        if problem.row_tags[j][0] == exit_tag
    ))
    transitions = tuple(sorted({tag[1] for tag, _ in problem.row_tags}))
    result = StepResult(
        T=T,
        x_filtered=states[T],
        x_exit=states[exit_index],
        exit_index=exit_index,
        objective=float(sol.objective) + float(constant),
        n_vars=problem.n,
        n_ineq=problem.n_ineq,
        wall_time=time.perf_counter() - started,
        iterations=sol.iterations,
        active=active,
        transitions=transitions,
        kkt=max(sol.residuals.values()),
        states=states if keep_states else None,
    )
    return result, problem, sol
