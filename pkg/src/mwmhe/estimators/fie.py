"""Full-information estimation: one QP over the whole record."""
from __future__ import annotations

import time
from typing import Optional

import numpy as np

from ..dkf import DescriptorKalmanFilter
from ..errors import StructuralError
from ..model import ConstraintSet, DescriptorSystem, Prior
from ..qp import QPProblem, SolverSettings, VariableLayout, assemble
from .series import StepResult
from .stages import StageBuilder, arrival_cost, input_series, measurements, solve_window


def _prior_anchor(sys, prior, u):
    kf = DescriptorKalmanFilter(sys, prior)
    return arrival_cost(sys, kf[0], u[0])


def fie_problem(sys: DescriptorSystem, constraints: Optional[ConstraintSet], prior: Prior,
                data, inputs=None, T: Optional[int] = None) -> QPProblem:
    """Staged QP over ``x_1..x_T``.

    Objective: the prior term ``||E x_1 - A x0 - B u_0||^2`` weighted by
    ``A P0 A' + Q``, dynamics residuals for ``k = 1..T-1`` and measurement
    residuals for ``k = 1..T``. Inequalities apply to every transition
    ``(x_k, x_{k+1})`` with both states in the problem.
    """
    ys = measurements(data)
    T = ys.shape[0] - 1 if T is None else int(T)
    if T < 1:
        raise StructuralError("full-information estimation needs T >= 1")
    u = input_series(sys, inputs, T)
    builder = StageBuilder(sys, constraints)
    layout = VariableLayout()
    terms, rows = builder.sliding(layout, 1, T, _prior_anchor(sys, prior, u), ys, u)
    return assemble(layout, terms, (), rows)


def fie_solve(sys: DescriptorSystem, constraints: Optional[ConstraintSet], prior: Prior,
              data, inputs=None, T: Optional[int] = None, *,
              settings: Optional[SolverSettings] = None, eps_act: float = 1e-6,
              keep_states: bool = True, builder: Optional[StageBuilder] = None) -> StepResult:
    """Solve the full-information problem up to ``T``.

    The returned entry carries the whole estimated trajectory in ``states``
    when ``keep_states`` is set; ``x_filtered`` is the ``x_T`` block.
    """
    started = time.perf_counter()
    ys = measurements(data)
    T = ys.shape[0] - 1 if T is None else int(T)
    if T < 1:
        raise StructuralError("full-information estimation needs T >= 1")
    u = input_series(sys, inputs, T)
    builder = builder or StageBuilder(sys, constraints)
    layout = VariableLayout()
    terms, rows = builder.sliding(layout, 1, T, _prior_anchor(sys, prior, u), ys, u)
    result, _, _ = solve_window(layout, terms, rows, T=T, exit_index=1, constant=0.0,
                                settings=settings, eps_act=eps_act,
                                keep_states=keep_states, started=started)
    return result


def fie_trajectory(result: StepResult) -> np.ndarray:
    """Rows ``x_1..x_T`` of a kept full-information solution."""
    if result.states is None:
        raise ValueError("solution states were not kept")
    return np.array([result.states[k] for k in sorted(result.states)])
