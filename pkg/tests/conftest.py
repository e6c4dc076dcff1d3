"""Shared fixtures and random-instance generators."""
from __future__ import annotations

import numpy as np
import pytest

from mwmhe.dkf import riccati_steady_state
from mwmhe.errors import DivergenceError
from mwmhe.model import ConstraintSet, DescriptorSystem, Prior, simulate


def random_spd(rng, n, scale=1.0, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = scale * np.exp(rng.uniform(0.0, np.log(cond), n))
    return (Q * ev) @ Q.T


def random_system(rng, n, m=None, q=0, descriptor=False, stable=True):
    """Random detectable system; ``descriptor`` adds one free channel to ``E``."""
    m = m if m is not None else max(1, n - 1)
    while True:
        A = rng.standard_normal((n, n))
        if stable:
            A *= 0.9 / max(1.0, np.abs(np.linalg.eigvals(A)).max())
        H = rng.standard_normal((m, n))
        B = rng.standard_normal((n, q))
        E = np.eye(n)
        if descriptor:
            n1 = n - 1
            E = np.hstack([np.eye(n1), rng.standard_normal((n1, 1))])
            A = A[:n1]
            if stable:
                # the free channel is exogenous, so boundedness rests on this block
                A *= 0.9 / max(1.0, np.abs(np.linalg.eigvals(A[:, :n1])).max())
            B = B[:n1]
            H = np.vstack([H, np.eye(n)[-1:]]) if m < n else H
        sys = DescriptorSystem(E, A, B, H, random_spd(rng, E.shape[0], 0.5),
                               random_spd(rng, H.shape[0], 0.2))
        try:
            riccati_steady_state(sys)
        except DivergenceError:
            continue
        return sys


def random_prior(rng, n):
    return Prior(rng.standard_normal(n), random_spd(rng, n))


def noisy_data(rng, sys, T, x0=None, inputs=None):
    x0 = np.zeros(sys.n) if x0 is None else x0
    w = np.linalg.cholesky(sys.Q) @ rng.standard_normal((sys.n1, T))
    v = np.linalg.cholesky(sys.R) @ rng.standard_normal((sys.m, T))
    nf = sys.n - np.linalg.matrix_rank(sys.E)
    free = rng.standard_normal((T, nf)) if nf else None
    return simulate(sys, None, x0, inputs=inputs, process_noise=w.T, measurement_noise=v.T,
                    free_series=free, T=T)


def scalar_system(A=0.5, E=1.0, H=1.0, Q=1.0, R=1.0):
    return DescriptorSystem([[E]], [[A]], np.zeros((1, 0)), [[H]], [[Q]], [[R]])


def upper_bound(n, index, c):
    Ec = np.zeros((1, n))
    Ec[0, index] = 1.0
    return ConstraintSet(Ec, np.zeros((1, n)), [c])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def reference_system():
    """Rotation plus a decaying mode, first state measured, bound on the second.

    The noise-free truth from ``REFERENCE_X0`` circles with radius below 1.5,
    so the bound never binds on the truth but does bind on estimates started
    from a wrong prior.
    """
    th = 0.2
    A = np.array([[np.cos(th), -np.sin(th), 0.0],
                  [np.sin(th), np.cos(th), 0.0],
                  [0.3, 0.0, 0.5]])
    sys = DescriptorSystem(np.eye(3), A, np.zeros((3, 0)), [[1.0, 0.0, 0.0]],
                           0.1 * np.eye(3), 0.1 * np.eye(1))
    return sys, ConstraintSet.box(3, 1, -1.5, 1.5)


REFERENCE_X0 = np.array([1.0, -1.0, 1.0])
REFERENCE_PRIOR = Prior([3.0, 2.0, -4.0], np.eye(3))


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one ``PASS``/``FAIL`` line for the acceptance summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
