"""Window bookkeeping for the multiple-window estimator.

A fixed window ``[a, b]`` keeps the smoother terms and the inequality rows of
transitions ``a..b`` after they leave the sliding window. The stretch between
two fixed windows (or between the last window and the sliding window) is
unconstrained, so its interior states are eliminated in closed form and only
the two boundary states stay in the QP.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .._linalg import spd_inv, spd_solve
from ..dkf import Propagator, SmootherMap, propagator_advance
from ..errors import ConfigError, LedgerError
from ..qp import QuadTerm
from .stages import StageBuilder

GROWING = "growing"
DETACHED = "detached"
VANISHING = "vanishing"


@dataclass
class SmootherStep:
    Gamma: np.ndarray
    smap: SmootherMap
    u: np.ndarray
    Gamma_inv: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.Gamma_inv is None:
            self.Gamma_inv = spd_inv(self.Gamma, "Gamma_sm")


@dataclass
class FixedWindow:
    """Transitions ``a..b`` whose constraints stay in the problem."""

    s: int
    a: int
    b: int
    steps: Dict[int, SmootherStep] = field(default_factory=dict)
    status: str = GROWING

    def span(self) -> range:
        return range(self.a, self.b + 1)

    def variables(self) -> range:
        return range(self.a, self.b + 2)


@dataclass
class UnconstrainedWindow:
    """Unconstrained stretch after window ``s``: terms ``b+1 .. a_next-1``.

    ``prop`` composes the smoother maps for terms ``b+1 .. head-1`` and maps
    ``x_head`` to ``x_{b+1}``; ``terminal`` is the smoother step at
    ``a_next - 1`` which couples into the next window (or the sliding window).
    ``a_next`` is ``None`` while the stretch is still open at its far end.
    """

    s: int
    b: int
    prop: Propagator
    steps: List[SmootherStep] = field(default_factory=list)
    a_next: Optional[int] = None
    terminal: Optional[SmootherStep] = None

    @classmethod
    def open(cls, s: int, b: int, n: int) -> "UnconstrainedWindow":
        return cls(s, b, Propagator.identity(n, start=b + 1))

    @property
    def head(self) -> int:
        return self.prop.head

    def c(self, a_next: Optional[int] = None) -> int:
        a = self.a_next if a_next is None else a_next
        return a - self.b

    def advance(self, sys, step: SmootherStep) -> None:
        """Absorb the smoother map at ``head``."""
        self.prop = propagator_advance(self.prop, sys, step.Gamma, step.smap.base, step.u)
        self.steps.append(step)

    def interior(self, x_first: np.ndarray, x_last: np.ndarray) -> Dict[int, np.ndarray]:
        """States ``x_{b+2} .. x_{head-1}`` minimizing the eliminated terms.

        Given the boundary states, the eliminated noises take their conditional
        means ``e_k = Gamma_k M_k' W^{-1} delta`` with
        ``delta = x_{b+1} - M x_head - offset``; the states then follow from the
        backward smoother chain.
        """
        q = len(self.steps)
        if q < 2:
            return {}
        lam = spd_solve(self.prop.weight, x_first - self.prop.M @ x_last - self.prop.offset,
                        "propagator weight")
        Ms = [np.eye(x_first.size)]
        for st in self.steps[:-1]:
            Ms.append(Ms[-1] @ st.smap.gain)
        out = {}
        x = np.asarray(x_last, dtype=float)
        for i in range(q - 1, 0, -1):
            st = self.steps[i]
            e = st.Gamma @ (Ms[i].T @ lam)
            x = st.smap(x) + e
            out[self.b + 1 + i] = x
        return out


def build_fixed_cost(fw: FixedWindow, builder: StageBuilder) -> List[QuadTerm]:
    """Smoother terms coupling ``(x_k, x_{k+1})`` for ``k = a..b``."""
    if sorted(fw.steps) != list(fw.span()):
        raise LedgerError(
            f"window {fw.s} stores steps {sorted(fw.steps)} but spans [{fw.a}, {fw.b}]"
        )
    return [builder.smoother(k, st.Gamma, st.smap, st.Gamma_inv)
            for k, st in sorted(fw.steps.items())]


def build_unconstrained_cost(uw: UnconstrainedWindow, builder: StageBuilder,
                             a_next: Optional[int] = None,
                             terminal: Optional[SmootherStep] = None) -> List[QuadTerm]:
    """Reduced terms for the stretch ``b+1 .. a_next-1``.

    * ``c = 1``: nothing, the windows touch.
    * ``c = 2``: the single smoother term at ``b+1``.
    * ``c >= 3``: the eliminated chain as one term between ``x_{b+1}`` and
      ``x_{a_next-1}``, weighted by the accumulated propagator weight, plus the
      smoother term at ``a_next - 1``.
    """
    a = uw.a_next if a_next is None else a_next
    term = uw.terminal if terminal is None else terminal
    c = a - uw.b
    if c < 1:
        raise LedgerError(f"unconstrained stretch after window {uw.s} has c={c}")
    if c == 1:
        return []
    if term is None:
        raise LedgerError(f"unconstrained stretch after window {uw.s} lacks its terminal step")
    if uw.head != a - 1:
        raise LedgerError(
            f"propagator of window {uw.s} ends at {uw.head}, expected {a - 1}"
        )
    out = []
    if c >= 3:
        out.append(builder.reduced(uw.b + 1, a - 1, uw.prop))
    out.append(builder.smoother(a - 1, term.Gamma, term.smap, term.Gamma_inv))
    return out


class WindowLedger:
    """Live fixed windows, their unconstrained stretches and the new-window flag.

    Parameters
    ----------
    N : int
        Sliding-window length.
    N_FC : int
        Number of solves a fixed window stays in the problem after its last
        transition has left the sliding window.
    eviction_rule : {"text", "flowchart"}
        ``"text"`` measures the lag from the window exit (evict before the
        solve at ``T`` when ``T > b + N + N_FC``). ``"flowchart"`` measures it
        from the window end without the sliding length
        (``T > b + N_FC + 1``).
    """

    def __init__(self, N: int, N_FC: int, eviction_rule: str = "text"):
        if N < 1:
            raise ConfigError(f"N must be >= 1, got {N}")
        if N_FC < 0:
            raise ConfigError(f"N_FC must be >= 0, got {N_FC}")
        if eviction_rule not in ("text", "flowchart"):
            raise ConfigError(f"unknown eviction rule {eviction_rule!r}")
        self.N = int(N)
        self.N_FC = int(N_FC)
        self.eviction_rule = eviction_rule
        self.windows: List[FixedWindow] = []
        self.unconstrained: Dict[int, UnconstrainedWindow] = {}
        self.new_window_flag = True
        self.S = 0
        self.active_history: List[Tuple[int, Tuple[int, ...]]] = []

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def s_min(self) -> Optional[int]:
        return self.windows[0].s if self.windows else None

    @property
    def last(self) -> Optional[FixedWindow]:
        return self.windows[-1] if self.windows else None

    def expired(self, T: int, fw: FixedWindow) -> bool:
        if self.eviction_rule == "text":
            return T > fw.b + self.N + self.N_FC
        return T > fw.b + self.N_FC + 1

    def evict(self, T: int) -> List[str]:
        """Drop windows whose lag is used up before the solve at ``T``."""
        events = []
        while self.windows and self.expired(T, self.windows[0]):
            fw = self.windows.pop(0)
            self.unconstrained.pop(fw.s, None)
            fw.steps.clear()
            if fw.status == GROWING:
                self.new_window_flag = True
            events.append(f"evict {fw.s} [{fw.a},{fw.b}]")
        return events

    def open_stretch(self) -> Optional[UnconstrainedWindow]:
        """Unconstrained stretch still attached to the sliding window, if any."""
        fw = self.last
        if fw is None or fw.status != DETACHED:
            return None
        return self.unconstrained[fw.s]

    def form(self, t0: int, n: int, terminal: Optional[SmootherStep]) -> FixedWindow:
        """Start window ``S+1`` at ``a = t0``; closes the previous open stretch."""
        uw = self.open_stretch()
        if uw is not None:
            uw.a_next = t0
            uw.terminal = terminal
            self.last.status = VANISHING
        self.S += 1
        fw = FixedWindow(self.S, t0, t0 - 1)
        self.windows.append(fw)
        self.new_window_flag = False
        return fw

    def grow(self, t0: int, step: SmootherStep) -> None:
        fw = self.last
        if fw is None or fw.status != GROWING or fw.b != t0 - 1:
            raise LedgerError(f"no growing window ends at {t0 - 1}")
        fw.b = t0
        fw.steps[t0] = step

    def detach(self, n: int) -> None:
        fw = self.last
        if fw is None or fw.status != GROWING:
            raise LedgerError("detach requested without a growing window")
        fw.status = DETACHED
        self.unconstrained[fw.s] = UnconstrainedWindow.open(fw.s, fw.b, n)
        self.new_window_flag = True

    def check(self) -> None:
        """Raise :class:`LedgerError` if windows overlap or stored data is off."""
        prev_b = None
        for i, fw in enumerate(self.windows):
            if fw.a > fw.b:
                raise LedgerError(f"window {fw.s} is empty: [{fw.a}, {fw.b}]")
            if prev_b is not None and fw.a <= prev_b:
                raise LedgerError(f"window {fw.s} starts at {fw.a}, overlapping {prev_b}")
            if sorted(fw.steps) != list(fw.span()):
                raise LedgerError(f"window {fw.s} stores steps outside [{fw.a}, {fw.b}]")
            if i + 1 < len(self.windows):
                uw = self.unconstrained.get(fw.s)
                nxt = self.windows[i + 1].a
                if uw is None or uw.a_next != nxt:
                    raise LedgerError(f"stretch after window {fw.s} does not reach {nxt}")
            prev_b = fw.b
        if sum(fw.status == GROWING for fw in self.windows) > 1:
            raise LedgerError("more than one growing window")

    def summary(self) -> List[Tuple[int, int, int, str]]:
        return [(fw.s, fw.a, fw.b, fw.status) for fw in self.windows]
