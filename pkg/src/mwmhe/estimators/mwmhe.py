"""Multiple-window moving horizon estimation.

Each solve combines three kinds of cost:

* fixed windows: smoother terms over past stretches whose constraints were
  active when they left the sliding window, kept with their constraints;
* unconstrained stretches between them, reduced to one term on their boundary
  states;
* the sliding window with its arrival cost, exactly as in plain MHE.

With no live window the step is identical to a plain MHE step.
"""
from __future__ import annotations

import time
from typing import Optional

import numpy as np

from ..dkf import DescriptorKalmanFilter, select_horizon
from ..errors import ConfigError
from ..model import ConstraintSet, DescriptorSystem, Prior
from ..qp import SolverSettings, VariableLayout
from .mhe import check_divergence, mhe_step, trace_record
from .series import EstimateSeries, StepResult
from .stages import StageBuilder, arrival_cost, input_series, measurements, solve_window
from .windows import (
    DETACHED, GROWING, SmootherStep, WindowLedger, build_fixed_cost, build_unconstrained_cost,
)


class MWContext:
    """Filter history, data and builder shared by the steps of one run."""

    def __init__(self, sys: DescriptorSystem, constraints: Optional[ConstraintSet],
                 prior: Prior, ys: np.ndarray, u: np.ndarray):
        self.sys = sys
        self.builder = StageBuilder(sys, constraints)
        self.kf = DescriptorKalmanFilter(sys, prior)
        self.ys = ys
        self.u = u

    def smoother_step(self, k: int) -> SmootherStep:
        self.kf.run(self.u, self.ys, k)
        Gamma, smap = self.kf.smoother(k, self.u[k])
        return SmootherStep(Gamma, smap, self.u[k])


def _slack_violations(cons, states: dict, lo: int, hi: int, tol: float) -> int:
    count = 0
    for k in range(lo, hi + 1):
        if k in states and k + 1 in states:
            count += int(np.sum(cons.slack(states[k], states[k + 1]) < -tol * (1 + np.abs(cons.dc))))
    return count


def mwmhe_step(ledger: WindowLedger, ctx: MWContext, T: int, *,
               settings: Optional[SolverSettings] = None, eps_act: float = 1e-6,
               keep_states: bool = False, verify: bool = False):
    """Solve at ``T > N`` and update the ledger; returns ``(StepResult, trace record)``."""
    started = time.perf_counter()
    N = ledger.N
    t0 = T - N
    if t0 < 1:
        raise ConfigError(f"multiple-window step needs T > N, got T={T}, N={N}")
    events = ledger.evict(T)
    sys, builder, kf = ctx.sys, ctx.builder, ctx.kf
    kf.run(ctx.u, ctx.ys, t0)

    # bring the open stretch up to the sliding window
    uw_open = ledger.open_stretch()
    if uw_open is not None:
        while uw_open.head < t0 - 1:
            uw_open.advance(sys, ctx.smoother_step(uw_open.head))

    times = []
    for fw in ledger.windows:
        times.extend(fw.variables())
        uw = ledger.unconstrained.get(fw.s)
        if uw is not None:
            times.append((uw.a_next if uw.a_next is not None else t0) - 1)
    times = [k for k in times if k < t0]
    layout = VariableLayout()
    builder.register(layout, times)

    terms, rows = [], []
    for fw in ledger.windows:
        terms.extend(build_fixed_cost(fw, builder))
        if builder.cons.n_ineq:
            rows.extend(builder.transition(k) for k in fw.span())
        uw = ledger.unconstrained.get(fw.s)
        if uw is None:
            continue
        if uw.a_next is None:
            terminal = ctx.smoother_step(t0 - 1) if t0 - uw.b >= 2 else None
            terms.extend(build_unconstrained_cost(uw, builder, t0, terminal))
        else:
            terms.extend(build_unconstrained_cost(uw, builder))

    arrival = arrival_cost(sys, kf[t0 - 1], ctx.u[t0 - 1])
    s_terms, s_rows = builder.sliding(layout, t0, T, arrival, ctx.ys, ctx.u)
    terms.extend(s_terms)
    rows.extend(s_rows)

    result, problem, sol = solve_window(layout, terms, rows, T=T, exit_index=t0,
                                        constant=kf[t0 - 1].cost, settings=settings,
                                        eps_act=eps_act, keep_states=keep_states or verify,
                                        started=started)

    violations = 0
    if verify and builder.cons.n_ineq:
        states = dict(result.states)
        for fw in ledger.windows:
            uw = ledger.unconstrained.get(fw.s)
            if uw is None:
                continue
            a_next = uw.a_next if uw.a_next is not None else t0
            if a_next - uw.b >= 3:
                states.update(uw.interior(states[uw.b + 1], states[uw.head]))
            violations += _slack_violations(builder.cons, states, uw.b + 1, a_next - 1, 1e-8)
        if not keep_states:
            result.states = None

    # lifecycle
    ledger.active_history.append((t0, result.active))
    if result.active:
        if ledger.new_window_flag:
            terminal = None
            uw = ledger.open_stretch()
            if uw is not None and t0 - uw.b >= 2:
                terminal = ctx.smoother_step(t0 - 1)
            fw = ledger.form(t0, sys.n, terminal)
            events.append(f"form {fw.s} at {t0}")
        ledger.grow(t0, ctx.smoother_step(t0))
        events.append(f"grow {ledger.last.s} to {t0}")
    elif not ledger.new_window_flag:
        ledger.detach(sys.n)
        events.append(f"detach {ledger.last.s}")
    ledger.check()

    lo = min([fw.a for fw in ledger.windows] + [t0]) - 1
    kf.forget_before(lo)
    result.wall_time = time.perf_counter() - started
    rec = trace_record(result, ledger.summary(), events, flag=ledger.new_window_flag,
                       transitions=list(result.transitions), violations=violations)
    return result, rec


def mwmhe_run(sys: DescriptorSystem, constraints: Optional[ConstraintSet], prior: Prior,
              data, N: int, N_FC: Optional[int] = None, T_final: Optional[int] = None,
              inputs=None, *, U: Optional[float] = None, eviction_rule: str = "text",
              settings: Optional[SolverSettings] = None, eps_act: float = 1e-6,
              divergence_bound: float = 1e8, keep_states: bool = False,
              verify: bool = False) -> EstimateSeries:
    """Run the multiple-window estimator for ``T = 1..T_final``.

    Exactly one of ``N_FC`` and ``U`` must be given; with ``U`` the lag is the
    smallest one whose steady-state coupling norm is at most ``U``. Steps with
    ``T <= N`` are full-information solves and leave the ledger untouched.
    ``verify`` recovers the eliminated states at every step and counts
    constraint violations among them (reported, never raised).
    """
    if (N_FC is None) == (U is None):
        raise ConfigError("give exactly one of N_FC and U")
    if N_FC is None:
        N_FC = select_horizon(sys, U)
    ys = measurements(data)
    T_final = ys.shape[0] - 1 if T_final is None else int(T_final)
    u = input_series(sys, inputs, T_final)
    ledger = WindowLedger(N, N_FC, eviction_rule)
    ctx = MWContext(sys, constraints, prior, ys, u)
    series = EstimateSeries("mwmhe", ledger.N, ledger.N_FC)
    for T in range(1, T_final + 1):
        if T <= ledger.N:
            step, _, _ = mhe_step(ctx.builder, ctx.kf, ys, u, ledger.N, T, settings=settings,
                                  eps_act=eps_act, keep_states=keep_states)
            rec = trace_record(step, (), (), flag=True, transitions=list(step.transitions),
                               violations=0)
        else:
            step, rec = mwmhe_step(ledger, ctx, T, settings=settings, eps_act=eps_act,
                                   keep_states=keep_states, verify=verify)
            series.hypothesis_violations += rec["violations"]
        check_divergence(step, divergence_bound)
        series.append(step)
        series.trace.append(rec)
    return series
