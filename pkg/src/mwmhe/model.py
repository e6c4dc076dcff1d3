"""Descriptor system definitions, structural checks and simulation.

The model is

    E x_{k+1} = A x_k + B u_k + w_k
    y_{k+1}   = H x_{k+1} + v_k

with ``E, A`` of shape ``(n1, n)``. Time-indexed arrays follow the convention
that row ``k`` holds the quantity at time ``k``; measurement arrays therefore
have ``T + 1`` rows with row 0 unused (NaN).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._linalg import is_spd, numerical_rank, symmetrize
from .errors import InfeasibleDynamicsError, StructuralError

SIM_TOL = 1e-10


def _mat(a, name, ndim=2) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim == 2:
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 0)
        if arr.ndim != 2:
            raise StructuralError(f"{name} must be a matrix, got shape {arr.shape}")
    elif arr.ndim != 1:
        raise StructuralError(f"{name} must be a vector, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DescriptorSystem:
    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("E", "A", "B", "H", "Q", "R"):
            object.__setattr__(self, name, _mat(getattr(self, name), name))
        E, A, H = self.E, self.A, self.H
        n1, n = E.shape
        B = self.B
        if B.size == 0:
            B = np.zeros((n1, 0))
            B.setflags(write=False)
            object.__setattr__(self, "B", B)
        if A.shape != E.shape:
            raise StructuralError(f"E {E.shape} and A {A.shape} must have the same shape")
        if B.shape[0] != n1:
            raise StructuralError(f"B has {B.shape[0]} rows, E has {n1}")
        if H.shape[1] != n:
            raise StructuralError(f"H has {H.shape[1]} columns, E has {n}")
        if self.Q.shape != (n1, n1):
            raise StructuralError(f"Q must be {(n1, n1)} to match E, got {self.Q.shape}")
        m = H.shape[0]
        if self.R.shape != (m, m):
            raise StructuralError(f"R must be {(m, m)} to match H, got {self.R.shape}")

    @property
    def n(self) -> int:
        return self.E.shape[1]

    @property
    def n1(self) -> int:
        return self.E.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class ConstraintSet:
    """Inequalities ``Ec x_{k+1} <= Ac x_k + dc`` on stage transitions."""

    Ec: np.ndarray
    Ac: np.ndarray
    dc: np.ndarray

    def __post_init__(self):
        Ec = np.array(self.Ec, dtype=float)
        Ac = np.array(self.Ac, dtype=float)
        dc = np.array(self.dc, dtype=float).reshape(-1)
        if Ec.ndim != 2 or Ac.ndim != 2:
            raise StructuralError("Ec and Ac must be matrices")
        if not (Ec.shape[0] == Ac.shape[0] == dc.shape[0]):
            raise StructuralError(
                f"row counts differ: Ec {Ec.shape[0]}, Ac {Ac.shape[0]}, dc {dc.shape[0]}"
            )
        if Ec.shape[1] != Ac.shape[1]:
            raise StructuralError(f"Ec {Ec.shape} and Ac {Ac.shape} column counts differ")
        for name, arr in (("Ec", Ec), ("Ac", Ac), ("dc", dc)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, n: int) -> "ConstraintSet":
        return cls(np.zeros((0, n)), np.zeros((0, n)), np.zeros(0))

    @classmethod
    def box(cls, n: int, index: int, lower: float, upper: float) -> "ConstraintSet":
        """Bounds ``lower <= x[index] <= upper`` applied to the arriving state."""
        Ec = np.zeros((2, n))
        Ec[0, index] = 1.0
        Ec[1, index] = -1.0
        return cls(Ec, np.zeros((2, n)), np.array([upper, -lower]))

    @property
    def n_ineq(self) -> int:
        return self.Ec.shape[0]

    @property
    def n(self) -> int:
        return self.Ec.shape[1]

    def slack(self, x_prev: np.ndarray, x_next: np.ndarray) -> np.ndarray:
        """``Ac x_k + dc - Ec x_{k+1}``; negative entries are violations."""
        return self.Ac @ x_prev + self.dc - self.Ec @ x_next


@dataclass(frozen=True)
class Prior:
    x0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x0", _mat(self.x0, "x0", ndim=1))
        object.__setattr__(self, "P0", _mat(self.P0, "P0"))
        if self.P0.shape != (self.x0.size, self.x0.size):
            raise StructuralError(f"P0 {self.P0.shape} does not match x0 ({self.x0.size})")
        if not is_spd(self.P0):
            raise StructuralError("P0 must be symmetric positive definite")

    def predicted_weight(self, sys: DescriptorSystem) -> np.ndarray:
        """``A P0 A' + Q``, the weight on the first dynamics residual."""
        return symmetrize(sys.A @ self.P0 @ sys.A.T + sys.Q)


@dataclass
class Trajectory:
    states: np.ndarray          # (T+1, n), row k is x_k
    inputs: np.ndarray          # (T, q)
    process_noise: np.ndarray   # (T, n1)
    residuals: np.ndarray       # (T,) consistency residual per step
    violations: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1


@dataclass
class MeasurementRecord:
    y: np.ndarray   # (T+1, m), row k is y_k, row 0 is NaN
    v: np.ndarray   # (T, m), row k is v_k


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    rank: int
    required: int
    singular_values: np.ndarray


@dataclass
class ValidationReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __str__(self) -> str:
        lines = []
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            lines.append(f"{c.name}: {status} (rank {c.rank}, required {c.required})")
        return "\n".join(lines)


def validate_system(sys: DescriptorSystem) -> ValidationReport:
    """Check full row rank of ``[E A]``, full column rank of ``[E; H]`` and SPD weights."""
    checks = []
    r, sv = numerical_rank(np.hstack([sys.E, sys.A]))
    checks.append(AssumptionCheck("[E A] full row rank", r == sys.n1, r, sys.n1, sv))
    r, sv = numerical_rank(np.vstack([sys.E, sys.H]))
    checks.append(AssumptionCheck("[E; H] full column rank", r == sys.n, r, sys.n, sv))
    for name, W in (("Q", sys.Q), ("R", sys.R)):
        dim = W.shape[0]
        ev = np.linalg.eigvalsh(0.5 * (W + W.T)) if dim else np.zeros(0)
        tol = dim * (np.abs(ev).max(initial=0.0)) * 1e-12
        sym = np.allclose(W, W.T, rtol=1e-12, atol=1e-14)
        ok = sym and bool(ev.min(initial=np.inf) > tol)
        checks.append(AssumptionCheck(f"{name} symmetric positive definite", ok,
                                      int(np.sum(ev > tol)), dim, ev))
    return ValidationReport(checks)


def null_basis(E: np.ndarray) -> np.ndarray:
    """Orthonormal columns spanning ``{v : E v = 0}``."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    n = E.shape[1]
    if E.shape[0] == 0:
        return np.eye(n)
    r, _ = numerical_rank(E)
    _, _, Vt = np.linalg.svd(E)
    return Vt[r:].T.copy()


def _series(a, T, width, name) -> np.ndarray:
    if a is None:
        return np.zeros((T, width))
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1 and width == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, width)
    if arr.shape[0] < T or (arr.ndim == 2 and arr.shape[1] != width):
        raise StructuralError(f"{name} needs shape ({T}, {width}), got {arr.shape}")
    return arr[:T].reshape(T, width)


def simulate(
    sys: DescriptorSystem,
    constraints: Optional[ConstraintSet],
    x0,
    inputs=None,
    process_noise=None,
    free_series=None,
    T: Optional[int] = None,
    measurement_noise=None,
    free_channels: Optional[Sequence[int]] = None,
) -> tuple[Trajectory, MeasurementRecord]:
    """Propagate the descriptor equation and generate measurements.

    Each step takes the minimum-norm solution of ``E x = A x_k + B u_k + w_k``
    and adds ``null_basis(E) @ free_series[k]``. When ``free_channels`` is
    given, ``free_series[k]`` instead holds target values for those state
    components and the null-space coefficients are solved for.

    Constraint violations are recorded in ``Trajectory.violations`` and
    reported through a warning; they are never enforced.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != sys.n:
        raise StructuralError(f"x0 has length {x0.size}, system has n={sys.n}")
    if T is None:
        T = len(inputs) if inputs is not None else len(process_noise)
    N = null_basis(sys.E)
    nf = N.shape[1]
    U = _series(inputs, T, sys.q, "inputs")
    W = _series(process_noise, T, sys.n1, "process_noise")
    V = _series(measurement_noise, T, sys.m, "measurement_noise")
    if free_channels is not None:
        F = _series(free_series, T, len(free_channels), "free_series")
        sel = N[list(free_channels), :]
        if nf and np.linalg.matrix_rank(sel) < min(sel.shape):
            raise StructuralError("free channels are not reachable through the null space")
    else:
        F = _series(free_series, T, nf, "free_series")
    E_pinv = np.linalg.pinv(sys.E) if sys.n1 else np.zeros((sys.n, 0))

    X = np.empty((T + 1, sys.n))
    X[0] = x0
    residuals = np.empty(T)
    for k in range(T):
        rhs = sys.A @ X[k] + sys.B @ U[k] + W[k]
        x = E_pinv @ rhs
        res = float(np.max(np.abs(sys.E @ x - rhs), initial=0.0))
        if res > SIM_TOL * (1.0 + np.max(np.abs(rhs), initial=0.0)):
            raise InfeasibleDynamicsError(k, res)
        if nf:
            if free_channels is not None:
                coef, *_ = np.linalg.lstsq(sel, F[k] - x[list(free_channels)], rcond=None)
                x = x + N @ coef
            else:
                x = x + N @ F[k]
        X[k + 1] = x
        residuals[k] = float(np.max(np.abs(sys.E @ x - rhs), initial=0.0))

    Y = np.full((T + 1, sys.m), np.nan)
    Y[1:] = X[1:] @ sys.H.T + V

    violations = []
    if constraints is not None and constraints.n_ineq:
        for k in range(T):
            if np.any(constraints.slack(X[k], X[k + 1]) < -SIM_TOL):
                violations.append(k)
        if violations:
            warnings.warn(
                f"simulated trajectory violates constraints at {len(violations)} steps",
                RuntimeWarning,
                stacklevel=2,
            )
    traj = Trajectory(X, U, W, residuals, violations)
    return traj, MeasurementRecord(Y, V)


# --- JSON interchange -----------------------------------------------------

def system_to_dict(sys, constraints=None, prior=None) -> dict:
    out = {k: getattr(sys, k).tolist() for k in ("E", "A", "B", "H", "Q", "R")}
    if constraints is not None:
        out["constraints"] = {
            "Ec": constraints.Ec.tolist(),
            "Ac": constraints.Ac.tolist(),
            "dc": constraints.dc.tolist(),
        }
    if prior is not None:
        out["prior"] = {"x0": prior.x0.tolist(), "P0": prior.P0.tolist()}
    return out


def system_from_dict(d: dict):
    missing = [k for k in ("E", "A", "H", "Q", "R") if k not in d]
    if missing:
        raise StructuralError(f"system definition missing keys: {missing}")
    E = np.asarray(d["E"], dtype=float)
    B = d.get("B")
    if B is None or len(B) == 0:
        B = np.zeros((E.shape[0], 0))
    sys = DescriptorSystem(d["E"], d["A"], B, d["H"], d["Q"], d["R"])
    cons = ConstraintSet.empty(sys.n)
    if d.get("constraints"):
        c = d["constraints"]
        cons = ConstraintSet(
            np.asarray(c["Ec"], dtype=float).reshape(-1, sys.n),
            np.asarray(c["Ac"], dtype=float).reshape(-1, sys.n),
            c["dc"],
        )
        if cons.n != sys.n:
            raise StructuralError(f"constraints act on {cons.n} states, system has {sys.n}")
    prior = None
    if d.get("prior"):
        p = d["prior"]
        prior = Prior(p["x0"], p["P0"])
        if prior.x0.size != sys.n:
            raise StructuralError(f"prior x0 has length {prior.x0.size}, system has {sys.n}")
    return sys, cons, prior


def load_system(path):
    with open(path) as fh:
        return system_from_dict(json.load(fh))


def save_system(path, sys, constraints=None, prior=None) -> None:
    Path(path).write_text(json.dumps(system_to_dict(sys, constraints, prior), indent=2))
