import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwmhe.dkf import DescriptorKalmanFilter, kalman_filter, measurement_update
from mwmhe.errors import ConfigError, DivergenceError, LedgerError
from mwmhe.estimators import (
    MWContext, SmootherStep, StageBuilder, UnconstrainedWindow, WindowLedger, arrival_cost,
    build_fixed_cost, build_unconstrained_cost, fie_problem, fie_solve, fie_trajectory,
    mhe_run, mwmhe_run, mwmhe_step,
)
from mwmhe.estimators.windows import DETACHED, GROWING, VANISHING, FixedWindow
from mwmhe.model import ConstraintSet, DescriptorSystem, Prior, simulate
from mwmhe.qp import VariableLayout, assemble

from conftest import (
    REFERENCE_PRIOR, REFERENCE_X0, noisy_data, random_prior, random_spd, random_system,
    reference_system, scalar_system, upper_bound,
)
from oracles import enumerate_active_sets, partial_minimization_case, reformulation_case


def _constrained_run(seed=0, T=120):
    """Reference plant with noise and a bound that binds now and then."""
    rng = np.random.default_rng(seed)
    sys, _ = reference_system()
    cons = ConstraintSet.box(3, 1, -1.2, 1.2)
    w = 0.3 * rng.standard_normal((T, 3))
    v = 0.3 * rng.standard_normal((T, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        traj, rec = simulate(sys, cons, REFERENCE_X0, process_noise=w, measurement_noise=v, T=T)
    return sys, cons, REFERENCE_PRIOR, traj, rec


# --- full information -----------------------------------------------------------------

class TestFIE:
    def test_unconstrained_equals_filter(self, rng):
        sys = random_system(rng, 4, q=1, descriptor=True)
        prior = random_prior(rng, 4)
        u = rng.standard_normal((15, 1))
        _, rec = noisy_data(rng, sys, 15, inputs=u)
        xf = kalman_filter(sys, prior, u, rec.y, 15)
        for T in (1, 7, 15):
            np.testing.assert_allclose(fie_solve(sys, None, prior, rec, u, T).x_filtered, xf[T],
                                       atol=1e-8)

    def test_single_stage_is_one_update(self, rng):
        I = np.eye(2)
        sys = DescriptorSystem(I, 0.5 * I, np.zeros((2, 0)), I, I, 0.3 * I)
        prior = Prior(rng.standard_normal(2), random_spd(rng, 2))
        y = np.vstack([np.full(2, np.nan), rng.standard_normal(2)])
        x, _ = measurement_update(sys, prior.x0, prior.predicted_weight(sys), None, y[1])
        np.testing.assert_allclose(fie_solve(sys, None, prior, y).x_filtered, x, atol=1e-12)

    def test_binding_upper_bound(self):
        sys = scalar_system(A=0.9, R=0.05)
        cons = upper_bound(1, 0, 1.0)
        prior = Prior([0.0], [[1.0]])
        y = np.array([[np.nan], [0.5], [1.5], [3.0]])
        res = fie_solve(sys, cons, prior, y)
        assert res.x_filtered[0] == pytest.approx(1.0, abs=1e-7)
        p = fie_problem(sys, cons, prior, y)
        H, f, c0, _, _, G, h = p.dense()
        x_ref, _, act = enumerate_active_sets(H, f, G, h)
        np.testing.assert_allclose(fie_trajectory(res)[:, 0], x_ref, atol=1e-7)
        assert 1 in act and res.active == (0,)

    def test_trajectory_requires_states(self, rng):
        sys = random_system(rng, 2)
        _, rec = noisy_data(rng, sys, 3)
        res = fie_solve(sys, None, random_prior(rng, 2), rec, keep_states=False)
        with pytest.raises(ValueError):
            fie_trajectory(res)


# --- arrival cost ------------------------------------------------------------------------

class TestArrivalCost:
    def test_zero_dynamics(self, rng):
        sys = DescriptorSystem(np.eye(2), np.zeros((2, 2)), np.zeros((2, 1)), np.eye(2),
                               np.eye(2), np.eye(2))
        kf = DescriptorKalmanFilter(sys, random_prior(rng, 2))
        ac = arrival_cost(sys, kf[0], np.ones(1))
        np.testing.assert_array_equal(ac.z, 0.0)
        x = rng.standard_normal(2)
        assert ac(x) == pytest.approx(x @ np.linalg.solve(kf[0].P_minus, x))

    def test_exact_anchor(self):
        sys, _ = reference_system()
        traj, rec = simulate(sys, None, REFERENCE_X0, T=5)
        kf = DescriptorKalmanFilter(sys, Prior(REFERENCE_X0, np.eye(3))).run(None, rec.y, 3)
        assert arrival_cost(sys, kf[3], None)(traj.states[4]) <= 1e-20

    def test_direct_evaluation(self, rng):
        sys = random_system(rng, 3, q=2, descriptor=True)
        prior = random_prior(rng, 3)
        u = rng.standard_normal((4, 2))
        _, rec = noisy_data(rng, sys, 4, inputs=u)
        kf = DescriptorKalmanFilter(sys, prior).run(u, rec.y, 2)
        ac = arrival_cost(sys, kf[2], u[2])
        x = rng.standard_normal(3)
        r = sys.E @ x - sys.A @ kf[2].x_plus - sys.B @ u[2]
        assert ac(x) == pytest.approx(r @ np.linalg.solve(kf[2].P_minus, r), rel=1e-12)


# --- moving horizon ----------------------------------------------------------------------

class TestMHE:
    def test_unconstrained_equals_filter(self, rng):
        sys = random_system(rng, 3, q=1)
        prior = random_prior(rng, 3)
        u = rng.standard_normal((40, 1))
        _, rec = noisy_data(rng, sys, 40, inputs=u)
        s = mhe_run(sys, None, prior, rec, 4, inputs=u)
        xf = kalman_filter(sys, prior, u, rec.y, 40)
        np.testing.assert_allclose(s.filtered, xf[1:], atol=1e-8)
        costs = [st.cost for st in DescriptorKalmanFilter(sys, prior).run(u, rec.y, 40).states]
        np.testing.assert_allclose(s.objective, costs[1:], rtol=1e-8)

    def test_full_window_is_full_information(self):
        sys, cons, prior, _, rec = _constrained_run(T=25)
        s = mhe_run(sys, cons, prior, rec, 25, keep_states=True)
        for T in (5, 17, 25):
            np.testing.assert_allclose(s.steps[T - 1].x_filtered,
                                       fie_solve(sys, cons, prior, rec, T=T).x_filtered,
                                       atol=1e-7)

    def test_noise_free_convergence(self):
        sys, cons = reference_system()
        traj, rec = simulate(sys, cons, REFERENCE_X0, T=200)
        s = mhe_run(sys, cons, REFERENCE_PRIOR, rec, 5)
        assert np.linalg.norm(s.filtered[-1] - traj.states[-1]) <= 1e-6
        assert s.active_fraction() > 0

    def test_invalid_horizon(self, rng):
        sys = random_system(rng, 2)
        with pytest.raises(ConfigError):
            mhe_run(sys, None, random_prior(rng, 2), np.zeros((3, sys.m)), 0)

    def test_divergence_guard(self, rng):
        sys = random_system(rng, 2)
        _, rec = noisy_data(rng, sys, 5)
        with pytest.raises(DivergenceError):
            mhe_run(sys, None, random_prior(rng, 2), rec, 2, divergence_bound=1e-9)

    def test_series_shapes_and_trace(self, tmp_path):
        sys, cons, prior, _, rec = _constrained_run(T=30)
        s = mhe_run(sys, cons, prior, rec, 5)
        assert len(s) == 30 and s.filtered.shape == (30, 3) and s.exit.shape == (30, 3)
        np.testing.assert_array_equal(s.times, np.arange(1, 31))
        assert s.n_vars.max() == 3 * 6
        s.write_trace(tmp_path / "t.jsonl")
        lines = (tmp_path / "t.jsonl").read_text().splitlines()
        assert len(lines) == 30 and json.loads(lines[-1])["T"] == 30


# --- reformulation and partial minimization --------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_reformulation_equivalence(seed):
    obj, obj_r, x, x_r = reformulation_case(np.random.default_rng(seed))
    assert obj_r == pytest.approx(obj, rel=1e-8)
    np.testing.assert_allclose(x_r, x, atol=1e-7)


@pytest.mark.parametrize("c", [2, 3, 4, 5, 6])
def test_partial_minimization(c):
    rng = np.random.default_rng(100 + c)
    for _ in range(3):
        obj, obj_ref, states, ref = partial_minimization_case(rng, c)
        assert obj == pytest.approx(obj_ref, rel=1e-7)
        for k, x in states.items():
            np.testing.assert_allclose(x, ref[k], atol=1e-7)


# --- window costs ------------------------------------------------------------------------

class TestWindowCosts:
    def _ctx(self, rng, A=None, T=12):
        sys = random_system(rng, 2, q=1)
        if A is not None:
            sys = DescriptorSystem(sys.E, A, sys.B, sys.H, sys.Q, sys.R)
        prior = random_prior(rng, 2)
        u = rng.standard_normal((T, 1))
        _, rec = noisy_data(rng, sys, T, inputs=u)
        return MWContext(sys, None, prior, rec.y, u)

    def test_single_step_window(self, rng):
        ctx = self._ctx(rng)
        fw = FixedWindow(1, 3, 3, {3: ctx.smoother_step(3)})
        terms = build_fixed_cost(fw, ctx.builder)
        assert len(terms) == 1 and set(terms[0].blocks) == {3, 4}

    def test_zero_dynamics_decouples(self, rng):
        ctx = self._ctx(rng, A=np.zeros((2, 2)))
        fw = FixedWindow(1, 2, 3, {k: ctx.smoother_step(k) for k in (2, 3)})
        for t in build_fixed_cost(fw, ctx.builder):
            k = t.tag[1]
            np.testing.assert_array_equal(t.blocks[k + 1], 0.0)
            np.testing.assert_allclose(t.g, ctx.kf[k].x_plus)

    def test_zero_at_smoothed_chain(self, rng):
        ctx = self._ctx(rng)
        steps = {k: ctx.smoother_step(k) for k in (4, 5)}
        fw = FixedWindow(1, 4, 5, steps)
        x6 = rng.standard_normal(2)
        x5 = steps[5].smap(x6)
        x4 = steps[4].smap(x5)
        layout = VariableLayout()
        for k in (4, 5, 6):
            layout.add(k, 2)
        p = assemble(layout, build_fixed_cost(fw, ctx.builder))
        assert p.term_objective(np.concatenate([x4, x5, x6])) == pytest.approx(0.0, abs=1e-20)

    def test_missing_steps_detected(self, rng):
        ctx = self._ctx(rng)
        fw = FixedWindow(1, 2, 4, {2: ctx.smoother_step(2), 4: ctx.smoother_step(4)})
        with pytest.raises(LedgerError):
            build_fixed_cost(fw, ctx.builder)

    def test_adjacent_and_short_stretches(self, rng):
        ctx = self._ctx(rng)
        uw = UnconstrainedWindow.open(1, 3, 2)
        assert build_unconstrained_cost(uw, ctx.builder, a_next=4) == []
        terms = build_unconstrained_cost(uw, ctx.builder, a_next=5, terminal=ctx.smoother_step(4))
        assert [t.tag for t in terms] == [("smooth", 4)]

    def test_long_stretch_reduced(self, rng):
        ctx = self._ctx(rng)
        uw = UnconstrainedWindow.open(1, 3, 2)
        for k in (4, 5, 6):
            uw.advance(ctx.sys, ctx.smoother_step(k))
        assert uw.head == 7 and uw.c(8) == 5
        terms = build_unconstrained_cost(uw, ctx.builder, a_next=8, terminal=ctx.smoother_step(7))
        assert [t.tag for t in terms] == [("reduced", 4, 7), ("smooth", 7)]
        with pytest.raises(LedgerError, match="ends at"):
            build_unconstrained_cost(uw, ctx.builder, a_next=9, terminal=ctx.smoother_step(8))

    def test_zero_dynamics_reduced_term_decouples(self, rng):
        ctx = self._ctx(rng, A=np.zeros((2, 2)))
        uw = UnconstrainedWindow.open(1, 3, 2)
        for k in (4, 5):
            uw.advance(ctx.sys, ctx.smoother_step(k))
        np.testing.assert_array_equal(uw.prop.M, 0.0)


# --- ledger ------------------------------------------------------------------------------

class TestLedger:
    def test_lifecycle(self):
        L = WindowLedger(2, 3)
        step = SmootherStep(np.eye(1), None, np.zeros(0), np.eye(1))
        fw = L.form(5, 1, None)
        assert not L.new_window_flag and fw.status == GROWING
        L.grow(5, step)
        L.grow(6, step)
        with pytest.raises(LedgerError):
            L.grow(8, step)
        L.detach(1)
        assert L.new_window_flag and fw.status == DETACHED
        assert L.open_stretch().b == 6
        fw2 = L.form(9, 1, step)
        assert fw.status == VANISHING and L.unconstrained[1].a_next == 9
        L.grow(9, step)
        L.check()
        assert L.summary() == [(1, 5, 6, VANISHING), (2, 9, 9, GROWING)]
        assert L.evict(11) == [] and L.evict(12) == ["evict 1 [5,6]"]
        assert L.evict(14) == [] and L.evict(15) == ["evict 2 [9,9]"] and L.new_window_flag

    def test_eviction_rules(self):
        text, chart = WindowLedger(3, 2, "text"), WindowLedger(3, 2, "flowchart")
        fw = FixedWindow(1, 4, 6)
        assert [T for T in range(7, 15) if text.expired(T, fw)][0] == 12
        assert [T for T in range(7, 15) if chart.expired(T, fw)][0] == 10

    def test_invalid(self):
        with pytest.raises(ConfigError):
            WindowLedger(0, 1)
        with pytest.raises(ConfigError):
            WindowLedger(1, -1)
        with pytest.raises(ConfigError):
            WindowLedger(1, 1, "other")
        with pytest.raises(LedgerError):
            WindowLedger(1, 1).detach(1)

    def test_overlap_detected(self):
        L = WindowLedger(1, 5)
        L.windows = [FixedWindow(1, 2, 4, {k: None for k in (2, 3, 4)}, DETACHED),
                     FixedWindow(2, 4, 4, {4: None})]
        with pytest.raises(LedgerError):
            L.check()


# --- multiple-window estimator ----------------------------------------------------------

class TestMWMHE:
    def test_unconstrained_equals_mhe_and_filter(self, rng):
        sys = random_system(rng, 3, q=1, descriptor=True)
        prior = random_prior(rng, 3)
        u = rng.standard_normal((50, 1))
        _, rec = noisy_data(rng, sys, 50, inputs=u)
        mw = mwmhe_run(sys, None, prior, rec, 1, 4, inputs=u)
        mh = mhe_run(sys, None, prior, rec, 5, inputs=u)
        xf = kalman_filter(sys, prior, u, rec.y, 50)
        np.testing.assert_allclose(mw.filtered, xf[1:], atol=1e-8)
        np.testing.assert_allclose(mh.filtered, xf[1:], atol=1e-8)
        np.testing.assert_allclose(mw.objective, mh.objective, rtol=1e-8)

    def test_coupling_bound_selects_lag(self, rng):
        sys = random_system(rng, 2)
        prior = random_prior(rng, 2)
        _, rec = noisy_data(rng, sys, 30)
        s = mwmhe_run(sys, None, prior, rec, 1, U=1e6)
        assert s.N_FC == 1
        np.testing.assert_allclose(s.filtered, kalman_filter(sys, prior, None, rec.y, 30)[1:],
                                   atol=1e-8)
        with pytest.raises(ConfigError):
            mwmhe_run(sys, None, prior, rec, 1, 2, U=1.0)
        with pytest.raises(ConfigError):
            mwmhe_run(sys, None, prior, rec, 1)

    def test_short_run_is_full_information(self):
        sys, cons, prior, _, rec = _constrained_run(T=6)
        s = mwmhe_run(sys, cons, prior, rec, 6, 2)
        np.testing.assert_allclose(s.filtered[-1], fie_solve(sys, cons, prior, rec).x_filtered,
                                   atol=1e-7)
        assert all(not r["events"] for r in s.trace)

    def test_isolated_episode(self):
        sys = scalar_system(A=0.5, R=0.01)
        cons = upper_bound(1, 0, 1.0)
        T = 40
        y = np.zeros((T + 1, 1))
        y[0] = np.nan
        y[20:23] = 5.0
        N, N_FC = 1, 3
        s = mwmhe_run(sys, cons, Prior([0.0], [[1.0]]), y, N, N_FC)
        events = [(r["T"], e) for r in s.trace for e in r["events"]]
        forms = [(T_, e) for T_, e in events if e.startswith("form")]
        evicts = [(T_, e) for T_, e in events if e.startswith("evict")]
        assert forms == [(20, "form 1 at 19")]
        assert evicts == [(26, "evict 1 [19,21]")]
        exits = [r["T"] for r in s.trace if r["T"] > N and 21 in r["transitions"]
                 and r["exit"] > 21]
        assert len(exits) == N_FC
        assert [r["windows"] for r in s.trace if r["T"] == 25] == [[[1, 19, 21, DETACHED]]]

    def test_zero_lag_is_mhe(self):
        sys, cons, prior, _, rec = _constrained_run()
        mw = mwmhe_run(sys, cons, prior, rec, 4, 0)
        mh = mhe_run(sys, cons, prior, rec, 4)
        assert mw.active_fraction() > 0
        assert max(r["n_windows"] for r in mw.trace) == 1
        assert all(r["n_vars"] == 3 * min(r["T"], 5) for r in mw.trace)
        np.testing.assert_allclose(mw.filtered, mh.filtered, atol=1e-7)

    def test_matches_mhe_when_windows_are_kept(self):
        sys, cons, prior, traj, rec = _constrained_run()
        mw = mwmhe_run(sys, cons, prior, rec, 1, 4, verify=True)
        mh = mhe_run(sys, cons, prior, rec, 5)
        err = lambda s: np.sum((s.filtered - traj.states[1:]) ** 2) / len(s)
        assert err(mw) <= 1.05 * err(mh)
        assert mw.n_vars.mean() < mh.n_vars.mean()
        assert mw.hypothesis_violations >= 0

    def test_noise_free_convergence(self):
        sys, cons = reference_system()
        traj, rec = simulate(sys, cons, REFERENCE_X0, T=200)
        s = mwmhe_run(sys, cons, REFERENCE_PRIOR, rec, 1, 4)
        assert np.linalg.norm(s.filtered[-1] - traj.states[-1]) <= 1e-6
        assert any(r["events"] for r in s.trace)

    @pytest.mark.parametrize("rule", ["text", "flowchart"])
    def test_ledger_safety(self, rule):
        sys, cons, prior, _, rec = _constrained_run(seed=3)
        N = 2
        ledger = WindowLedger(N, 3, rule)
        ctx = MWContext(sys, cons, prior, rec.y, np.zeros((120, 0)))
        seen_windows = 0
        for T in range(N + 1, 121):
            live = [fw for fw in ledger.windows if not ledger.expired(T, fw)]
            expected = sorted({k for fw in live for k in fw.span()} | set(range(T - N, T)))
            step, rec_ = mwmhe_step(ledger, ctx, T)
            assert list(step.transitions) == expected
            seen_windows = max(seen_windows, len(live))
        assert seen_windows >= 1
