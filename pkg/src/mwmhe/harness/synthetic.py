"""Synthetic benchmark plant: a two-inertia drive with a bounded load disturbance.

States are motor speed, load speed and shaft twist; an unknown load input
``d`` enters the load speed. Writing ``X_{k+1} = [x_{k+1}; d_k]`` gives a
descriptor model

    [I  -F] X_{k+1} = [A  0] X_k + B u_k + w_k,    y_k = [C  0] X_k + v_k,

in which ``d`` lives in the null space of ``E`` and is pinned only by the
measurements. The bound ``|d| <= d_max`` is the only inequality.
"""
from __future__ import annotations

import numpy as np

from ..model import ConstraintSet, DescriptorSystem, Prior

STATE_NAMES = ("omega_m", "omega_c", "twist", "d")
DISTURBANCE_CHANNEL = 3


def synthetic_system(dt: float = 0.1, d_max: float = 35.0, prior_var: float = 1.0,
                     damping_m: float = 0.02, damping_c: float = 0.15,
                     coupling_m: float = 0.01, coupling_c: float = 1.0, d_gain: float = 2.0):
    """Return ``(system, constraints, prior)`` for the benchmark plant."""
    A = np.array([
        [1.0 - damping_m, 0.0, -coupling_m],
        [0.0, 1.0 - damping_c, coupling_c],
        [dt, -dt, 1.0],
    ])
    F = np.array([[0.0], [d_gain], [0.0]])
    Bx = np.array([[dt], [0.0], [0.0]])
    C = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    E = np.hstack([np.eye(3), -F])
    A_aug = np.hstack([A, np.zeros((3, 1))])
    H = np.hstack([C, np.zeros((2, 1))])
    sys = DescriptorSystem(E, A_aug, Bx, H, np.eye(3), 0.1 * np.eye(2))
    cons = ConstraintSet.box(4, DISTURBANCE_CHANNEL, -d_max, d_max)
    prior = Prior(np.zeros(4), prior_var * np.eye(4))
    return sys, cons, prior


def default_disturbance(amplitude: float = 32.0):
    """Step schedule ``[(start, value), ...]`` for the load input.

    The default amplitude sits inside the default bound of 35, so the
    constraint binds only on noisy estimates, never on the truth.
    """
    a = float(amplitude)
    return [(0, 0.0), (60, a), (110, 0.0), (190, -a), (240, 0.0)]
