"""Staged quadratic programs.

A problem is a sum of weighted least-squares terms over blocks of a stacked
decision vector,

    minimize   sum_t || sum_b F_tb z_b - g_t ||^2_{W_t}
    subject to A_eq z = b_eq,  G z <= h,

with the inverse-weight convention ``||r||^2_W = r' W^{-1} r``. Terms and
constraint rows only ever touch a contiguous run of blocks, so the Hessian is
stored in lower band form and inequality rows in a compact "span" format.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Optional, Sequence

import numpy as np
from scipy import sparse

from .._linalg import spd_inv
from .._kernels import band_add_dense, band_symv, band_to_dense, span_matvec, span_rmatvec
from ..errors import StructuralError


class VariableLayout:
    """Ordered blocks of the decision vector, each tagged with a label."""

    def __init__(self):
        self.labels: list = []
        self.sizes: list = []
        self.offsets: list = []
        self._index: dict = {}
        self.size = 0

    def add(self, label: Hashable, size: int) -> int:
        if label in self._index:
            raise StructuralError(f"variable {label!r} registered twice")
        idx = len(self.labels)
        self.labels.append(label)
        self.sizes.append(int(size))
        self.offsets.append(self.size)
        self._index[label] = idx
        self.size += int(size)
        return idx

    def __contains__(self, label) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        return self._index[label]

    def slice(self, label) -> slice:
        i = self._index[label]
        return slice(self.offsets[i], self.offsets[i] + self.sizes[i])

    def extract(self, z: np.ndarray, label) -> np.ndarray:
        return z[self.slice(label)]

    def offset_map(self) -> dict:
        return {lab: off for lab, off in zip(self.labels, self.offsets)}


@dataclass
class QuadTerm:
    """``|| sum_b F[b] z_b - g ||^2_W``; ``blocks`` maps layout labels to ``F[b]``."""

    blocks: Dict[Hashable, np.ndarray]
    g: np.ndarray
    W: np.ndarray
    tag: Any = None
    Winv: Optional[np.ndarray] = None

    def residual(self, layout: VariableLayout, z: np.ndarray) -> np.ndarray:
        r = -np.asarray(self.g, dtype=float)
        for lab, F in self.blocks.items():
            r = r + F @ layout.extract(z, lab)
        return r


@dataclass
class LinearRows:
    """``sum_b C[b] z_b (<= or ==) d``; ``tag`` is carried into the row map."""

    blocks: Dict[Hashable, np.ndarray]
    d: np.ndarray
    tag: Any = None


@dataclass
class QPProblem:
    layout: VariableLayout
    terms: List[QuadTerm]
    H_band: np.ndarray            # (p+1, n) lower band of the Hessian
    f: np.ndarray
    c0: float
    A_eq: np.ndarray
    b_eq: np.ndarray
    G_vals: np.ndarray            # (m, w) dense values of each inequality row
    G_starts: np.ndarray          # (m,) first column of each row
    h: np.ndarray
    row_tags: list = field(default_factory=list)
    pieces: list = field(default_factory=list, repr=False)   # (start, F, g, Winv) per term

    @property
    def G(self) -> sparse.csr_matrix:
        """Inequality matrix as CSR, built on demand."""
        m, w = self.G_vals.shape
        rows = np.repeat(np.arange(m), w)
        cols = (self.G_starts[:, None] + np.arange(w)[None, :]).reshape(-1)
        G = sparse.csr_matrix((self.G_vals.reshape(-1), (rows, cols)), shape=(m, self.n))
        G.eliminate_zeros()
        return G

    @property
    def n(self) -> int:
        return self.layout.size

    @property
    def n_ineq(self) -> int:
        return self.h.size

    @property
    def n_eq(self) -> int:
        return self.b_eq.size

    @property
    def bandwidth(self) -> int:
        return self.H_band.shape[0] - 1

    def hess_mv(self, x: np.ndarray) -> np.ndarray:
        return band_symv(self.H_band, x)

    def G_mv(self, x: np.ndarray) -> np.ndarray:
        return span_matvec(self.G_vals, self.G_starts, x)

    def G_rmv(self, y: np.ndarray) -> np.ndarray:
        return span_rmatvec(self.G_vals, self.G_starts, y, self.n)

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.hess_mv(z) + self.f @ z + self.c0)

    def residual_objective(self, z: np.ndarray) -> float:
        """Objective as a sum of weighted squared residuals.

        Agrees with :meth:`objective` in exact arithmetic but avoids the
        cancellation of the expanded form when the states are large.
        """
        if not self.pieces:
            return self.objective(z)
        total = 0.0
        for start, F, g, Winv in self.pieces:
            r = F @ z[start:start + F.shape[1]] - g
            total += float(r @ Winv @ r)
        return total

    def term_objective(self, z: np.ndarray) -> float:
        """Objective evaluated term by term, independent of the assembled Hessian."""
        total = 0.0
        for t in self.terms:
            r = t.residual(self.layout, z)
            total += float(r @ np.linalg.solve(t.W, r))
        return total

    def dense(self):
        """``(H, f, c0, A_eq, b_eq, G, h)`` as dense arrays."""
        G = self.G.toarray()
        return band_to_dense(self.H_band), self.f.copy(), self.c0, self.A_eq, self.b_eq, G, self.h

    def to_json(self, path) -> None:
        H, f, c0, A, b, G, h = self.dense()
        doc = {
            "objective": "0.5 z'Hz + f'z + c0",
            "H": H.tolist(), "f": f.tolist(), "c0": c0,
            "A_eq": A.tolist(), "b_eq": b.tolist(),
            "G": G.tolist(), "h": h.tolist(),
            "layout": [{"label": str(lab), "offset": off, "size": sz}
                       for lab, off, sz in zip(self.layout.labels, self.layout.offsets,
                                               self.layout.sizes)],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)


def _as_block(C) -> np.ndarray:
    if isinstance(C, np.ndarray) and C.ndim == 2 and C.dtype == np.float64:
        return C
    return np.atleast_2d(np.asarray(C, dtype=float))


def _rows_on_span(layout, rows: LinearRows, nrows: int):
    index, offsets, sizes = layout._index, layout.offsets, layout.sizes
    idx = [index[lab] for lab in rows.blocks]
    lo, hi = min(idx), max(idx)
    start = offsets[lo]
    vals = np.zeros((nrows, offsets[hi] + sizes[hi] - start))
    for i, C in zip(idx, rows.blocks.values()):
        C = _as_block(C)
        off, size = offsets[i] - start, sizes[i]
        if C.shape != (nrows, size):
            raise StructuralError(
                f"constraint block for {layout.labels[i]!r} has shape {C.shape}, "
                f"expected {(nrows, size)}"
            )
        vals[:, off:off + size] += C
    return start, vals


def assemble(layout: VariableLayout, quadratic_terms: Sequence[QuadTerm],
             equalities: Sequence[LinearRows] = (),
             inequalities: Sequence[LinearRows] = ()) -> QPProblem:
    """Build the band Hessian, linear term and constraint matrices."""
    n = layout.size
    spans = []
    pieces = []
    for t in quadratic_terms:
        if not t.blocks:
            raise StructuralError("quadratic term without blocks")
        g = np.asarray(t.g, dtype=float).reshape(-1)
        W = _as_block(t.W)
        if W.shape != (g.size, g.size):
            raise StructuralError(f"weight {W.shape} does not match residual length {g.size}")
        start, F = _rows_on_span(layout, LinearRows(t.blocks, g), g.size)
        Winv = t.Winv if t.Winv is not None else spd_inv(W, "term weight")
        pieces.append((start, F, g, Winv))
        spans.append(F.shape[1])

    ineq = []
    for rows in inequalities:
        d = np.asarray(rows.d, dtype=float).reshape(-1)
        if d.size == 0:
            continue
        start, vals = _rows_on_span(layout, rows, d.size)
        ineq.append((start, vals, d, rows.tag))
        spans.append(vals.shape[1])

    p = max(spans, default=1) - 1
    p = max(0, min(p, n - 1))

    ab = np.zeros((p + 1, n))
    f = np.zeros(n)
    c0 = 0.0
    for start, F, g, Winv in pieces:
        WF = Winv @ F
        band_add_dense(ab, start, 2.0 * (F.T @ WF))
        f[start:start + F.shape[1]] -= 2.0 * (WF.T @ g)
        c0 += float(g @ Winv @ g)

    m = sum(v.shape[0] for _, v, _, _ in ineq)
    wmax = max((v.shape[1] for _, v, _, _ in ineq), default=0)
    G_vals = np.zeros((m, wmax))
    G_starts = np.zeros(m, dtype=np.int_)
    h = np.zeros(m)
    tags = []
    r = 0
    for start, vals, d, tag in ineq:
        k, w = vals.shape
        s = min(start, n - wmax)
        G_vals[r:r + k, start - s:start - s + w] = vals
        G_starts[r:r + k] = s
        h[r:r + k] = d
        tags.extend((tag, i) for i in range(k))
        r += k

    eq_rows = []
    eq_rhs = []
    for rows in equalities:
        d = np.asarray(rows.d, dtype=float).reshape(-1)
        start, vals = _rows_on_span(layout, rows, d.size)
        full = np.zeros((d.size, n))
        full[:, start:start + vals.shape[1]] = vals
        eq_rows.append(full)
        eq_rhs.append(d)
    A_eq = np.vstack(eq_rows) if eq_rows else np.zeros((0, n))
    b_eq = np.concatenate(eq_rhs) if eq_rhs else np.zeros(0)

    return QPProblem(layout, list(quadratic_terms), ab, f, c0, A_eq, b_eq,
                     G_vals, G_starts, h, tags, pieces)
