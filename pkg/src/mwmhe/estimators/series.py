"""Per-step estimator output."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np


@dataclass
class StepResult:
    """Outcome of one estimator solve at time ``T``.

    ``objective`` is the QP optimum plus the filter constant for everything
    summarized outside the QP, so it is comparable with the full-information
    objective at the same ``T``.
    """

    T: int
    x_filtered: np.ndarray
    x_exit: np.ndarray
    exit_index: int
    objective: float
    n_vars: int
    n_ineq: int
    wall_time: float
    iterations: int
    active: Tuple[int, ...] = ()
    transitions: Tuple[int, ...] = ()
    kkt: float = 0.0
    states: Optional[Dict[int, np.ndarray]] = field(default=None, repr=False)


@dataclass
class EstimateSeries:
    """Sequence of :class:`StepResult` for ``T = 1..T_final``."""

    method: str
    N: Optional[int] = None
    N_FC: Optional[int] = None
    steps: List[StepResult] = field(default_factory=list)
    trace: List[dict] = field(default_factory=list)
    hypothesis_violations: int = 0

    def append(self, step: StepResult) -> None:
        if self.steps and step.T != self.steps[-1].T + 1:
            raise ValueError(f"step T={step.T} does not follow T={self.steps[-1].T}")
        self.steps.append(step)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.T for s in self.steps], dtype=int)

    @property
    def filtered(self) -> np.ndarray:
        """``x_{T|T}`` stacked over ``T``."""
        return np.array([s.x_filtered for s in self.steps])

    @property
    def exit(self) -> np.ndarray:
        return np.array([s.x_exit for s in self.steps])

    @property
    def objective(self) -> np.ndarray:
        return np.array([s.objective for s in self.steps])

    @property
    def n_vars(self) -> np.ndarray:
        return np.array([s.n_vars for s in self.steps], dtype=int)

    @property
    def wall_time(self) -> np.ndarray:
        return np.array([s.wall_time for s in self.steps])

    @property
    def kkt(self) -> np.ndarray:
        return np.array([s.kkt for s in self.steps])

    def active_fraction(self) -> float:
        """Share of steps whose exit transition had an active row."""
        if not self.steps:
            return 0.0
        return sum(1 for s in self.steps if s.active) / len(self.steps)

    def write_trace(self, path) -> None:
        """One JSON object per line, one line per step."""
        with open(path, "w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
