"""Moving horizon estimation with the unconstrained arrival cost."""
from __future__ import annotations

import time
from typing import Optional

import numpy as np

from ..dkf import DescriptorKalmanFilter
from ..errors import ConfigError, DivergenceError
from ..model import ConstraintSet, DescriptorSystem, Prior
from ..qp import SolverSettings, VariableLayout
from .series import EstimateSeries, StepResult
from .stages import StageBuilder, arrival_cost, input_series, measurements, solve_window


def check_divergence(step: StepResult, bound: float) -> None:
    norm = float(np.linalg.norm(step.x_filtered))
    if not np.isfinite(norm) or norm > bound:
        raise DivergenceError(f"estimate norm {norm:.3e} exceeds {bound:.3e} at T={step.T}")


def trace_record(step: StepResult, windows=(), events=(), **extra) -> dict:
    rec = {
        "T": step.T,
        "exit": step.exit_index,
        "n_windows": len(windows),
        "windows": [list(w) for w in windows],
        "n_vars": step.n_vars,
        "n_ineq": step.n_ineq,
        "active": list(step.active),
        "objective": step.objective,
        "wall_time": step.wall_time,
        "events": list(events),
    }
    rec.update(extra)
    return rec


def mhe_step(builder: StageBuilder, kf: DescriptorKalmanFilter, ys, u, N: int, T: int, *,
             settings=None, eps_act=1e-6, keep_states=False, started=None):
    """One sliding-window solve at ``T``; full information while ``T <= N``."""
    started = time.perf_counter() if started is None else started
    t0 = max(1, T - N)
    kf.run(u, ys, t0 - 1)
    arrival = arrival_cost(builder.sys, kf[t0 - 1], u[t0 - 1])
    layout = VariableLayout()
    terms, rows = builder.sliding(layout, t0, T, arrival, ys, u)
    return solve_window(layout, terms, rows, T=T, exit_index=t0,
                        constant=kf[t0 - 1].cost, settings=settings, eps_act=eps_act,
                        keep_states=keep_states, started=started)


def mhe_run(sys: DescriptorSystem, constraints: Optional[ConstraintSet], prior: Prior,
            data, N: int, T_final: Optional[int] = None, inputs=None, *,
            settings: Optional[SolverSettings] = None, eps_act: float = 1e-6,
            divergence_bound: float = 1e8, keep_states: bool = False) -> EstimateSeries:
    """Run the estimator for ``T = 1..T_final`` with window length ``N``.

    For ``T <= N`` the window covers the whole record (full information); after
    that the window start moves one step per solve and the arrival cost is
    taken from the descriptor Kalman filter one step behind the window.
    """
    if int(N) < 1:
        raise ConfigError(f"horizon N must be >= 1, got {N}")
    N = int(N)
    ys = measurements(data)
    T_final = ys.shape[0] - 1 if T_final is None else int(T_final)
    u = input_series(sys, inputs, T_final)
    builder = StageBuilder(sys, constraints)
    kf = DescriptorKalmanFilter(sys, prior)
    series = EstimateSeries("mhe", N)
    for T in range(1, T_final + 1):
        step, _, _ = mhe_step(builder, kf, ys, u, N, T, settings=settings, eps_act=eps_act,
                              keep_states=keep_states)
        check_divergence(step, divergence_bound)
        series.append(step)
        series.trace.append(trace_record(step))
        kf.forget_before(T - N - 1)
    return series
