"""Active-set detection from an interior-point solution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ipm import QPSolution
from .problem import QPProblem


@dataclass(frozen=True)
class ActiveSetReport:
    slack_based: frozenset
    dual_based: frozenset

    @property
    def weakly_active(self) -> frozenset:
        return self.slack_based - self.dual_based


def active_set_report(sol: QPSolution, p: QPProblem, eps_act: float = 1e-6,
                      eps_dual: float = 1e-6) -> ActiveSetReport:
    if p.n_ineq == 0:
        return ActiveSetReport(frozenset(), frozenset())
    gap = p.h - p.G_mv(sol.x)
    slack = np.nonzero(gap <= eps_act * (1.0 + np.abs(p.h)))[0]
    dual = np.nonzero(sol.lam >= eps_dual)[0]
    return ActiveSetReport(frozenset(int(i) for i in slack), frozenset(int(i) for i in dual))


def active_set(sol: QPSolution, p: QPProblem, eps_act: float = 1e-6) -> frozenset:
    """Rows whose relative slack is below ``eps_act``; weakly active rows count."""
    return active_set_report(sol, p, eps_act).slack_based
