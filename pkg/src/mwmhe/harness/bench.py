"""Data generation, side-by-side estimator runs and report files."""
from __future__ import annotations

import csv
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..dkf import coupling_norms, riccati_steady_state, select_horizon
from ..errors import MWMHEError
from ..estimators import EstimateSeries, mhe_run, mwmhe_run
from ..model import ConstraintSet, MeasurementRecord, Prior, Trajectory, load_system, simulate
from .config import SYNTHETIC, ExperimentConfig
from .synthetic import DISTURBANCE_CHANNEL, default_disturbance, synthetic_system

SUMMARY_COLUMNS = ("method", "N", "N_FC", "mse", "time_ms", "time_reduction_pct",
                   "coupling_norm", "window", "status")
TIMING_COLUMNS = ("method", "N", "N_FC", "time_ms", "time_reduction_pct")


@dataclass
class Setup:
    """System, constraints, prior and free-channel schedule of an experiment."""

    sys: object
    constraints: ConstraintSet
    prior: Prior
    free_channels: Optional[List[int]]
    disturbance: Optional[list]


def resolve_system(cfg: ExperimentConfig) -> Setup:
    if cfg.system == SYNTHETIC:
        sys, cons, prior = synthetic_system(**cfg.synthetic)
        channels = cfg.free_channels if cfg.free_channels is not None else [DISTURBANCE_CHANNEL]
        sched = cfg.disturbance if cfg.disturbance is not None else default_disturbance()
        return Setup(sys, cons, prior, channels, sched)
    sys, cons, prior = load_system(cfg.system_path())
    if prior is None:
        prior = Prior(np.zeros(sys.n), np.eye(sys.n))
    return Setup(sys, cons, prior, cfg.free_channels, cfg.disturbance)


def step_schedule(schedule, T: int, width: int = 1) -> np.ndarray:
    """Piecewise-constant series ``(T, width)`` from ``[(start, value), ...]``."""
    out = np.zeros((T, width))
    for start, value in sorted(schedule, key=lambda p: p[0]):
        if start < T:
            out[max(int(start), 0):] = np.broadcast_to(np.asarray(value, dtype=float), (width,))
    return out


def generate_data(cfg: ExperimentConfig, setup: Optional[Setup] = None):
    """Simulate the configured experiment; returns ``(Trajectory, MeasurementRecord)``.

    Noise comes from ``numpy.random.Generator(PCG64(seed))``: process noise
    first, then measurement noise, both standard normal scaled by the
    configured standard deviations.
    """
    setup = setup or resolve_system(cfg)
    sys, T = setup.sys, cfg.T_final
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    w = math.sqrt(cfg.process_noise_var) * rng.standard_normal((T, sys.n1))
    v = math.sqrt(cfg.measurement_noise_var) * rng.standard_normal((T, sys.m))
    x0 = np.zeros(sys.n) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)
    kwargs = {}
    if setup.free_channels is not None and setup.disturbance is not None:
        kwargs = dict(free_channels=setup.free_channels,
                      free_series=step_schedule(setup.disturbance, T, len(setup.free_channels)))
    return simulate(sys, setup.constraints, x0, process_noise=w, measurement_noise=v,
                    T=T, **kwargs)


def total_mse(estimates: np.ndarray, truth: np.ndarray) -> float:
    """Sum of squared errors over all states and times, divided by the time count."""
    err = np.asarray(estimates) - np.asarray(truth)
    return float(np.sum(err * err) / err.shape[0])


@dataclass
class BenchmarkRow:
    method: str
    N: int
    N_FC: Optional[int]
    window: int
    mse: float = float("nan")
    time_ms: float = float("nan")
    time_reduction_pct: Optional[float] = None
    coupling_norm: Optional[float] = None
    status: str = "ok"
    estimates: Optional[np.ndarray] = field(default=None, repr=False)
    series: Optional[EstimateSeries] = field(default=None, repr=False)
    active_fraction: float = 0.0
    max_kkt: float = 0.0
    mean_vars: float = 0.0


@dataclass
class BenchmarkReport:
    config: ExperimentConfig
    truth: Trajectory
    measurements: MeasurementRecord
    rows: List[BenchmarkRow] = field(default_factory=list)

    def row(self, method: str, N: int) -> BenchmarkRow:
        for r in self.rows:
            if r.method == method and r.N == N:
                return r
        raise KeyError((method, N))


def _run_once(method, setup, rec, T, N, N_FC, window, eviction_rule):
    if method == "fie":
        # a window spanning the whole record makes every solve the full-information one,
        # so the row scores the filtered estimates x_{T|T} like the other methods
        s = mhe_run(setup.sys, setup.constraints, setup.prior, rec, T, T)
        return s.filtered, float(s.kkt.max()), None
    if method == "mhe":
        s = mhe_run(setup.sys, setup.constraints, setup.prior, rec, N, T)
    else:
        s = mwmhe_run(setup.sys, setup.constraints, setup.prior, rec, window, N_FC, T,
                      eviction_rule=eviction_rule)
    return s.filtered, float(s.kkt.max()), s


def run_cell(method, setup, rec, truth_states, T, N, N_FC, window, repeats,
             eviction_rule="text") -> BenchmarkRow:
    """One grid cell: a warm-up run, then ``repeats`` timed runs."""
    row = BenchmarkRow(method, N, N_FC, window)
    try:
        est, kkt, series = _run_once(method, setup, rec, T, N, N_FC, window, eviction_rule)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            _run_once(method, setup, rec, T, N, N_FC, window, eviction_rule)
            times.append(time.perf_counter() - t0)
    except MWMHEError as exc:
        row.status = f"failed: {type(exc).__name__}: {exc}"
        return row
    row.estimates = est
    row.series = series
    row.mse = total_mse(est, truth_states[1:T + 1])
    row.time_ms = 1e3 * statistics.median(times)
    row.max_kkt = kkt
    if series is not None:
        row.active_fraction = series.active_fraction()
        row.mean_vars = float(series.n_vars.mean())
    return row


def _cell_args(cfg: ExperimentConfig, lags, setup):
    T = cfg.T_final
    cells = []
    if cfg.methods.get("fie", True):
        cells.append(("fie", T, None, T))
    for N, q in zip(cfg.horizons, lags):
        if cfg.methods.get("mhe", True):
            cells.append(("mhe", N, None, N))
        if cfg.methods.get("mwmhe", True):
            window = N if cfg.U is not None else cfg.mw_window
            cells.append(("mwmhe", N, q, window))
    return cells


def run_benchmark(cfg: ExperimentConfig, repeats: Optional[int] = None,
                  workers: Optional[int] = None) -> BenchmarkReport:
    """Run every configured estimator on one simulated data set."""
    setup = resolve_system(cfg)
    truth, rec = generate_data(cfg, setup)
    repeats = cfg.repeats if repeats is None else repeats
    workers = cfg.workers if workers is None else workers
    riccati = riccati_steady_state(setup.sys)
    if cfg.U is not None:
        q = select_horizon(setup.sys, cfg.U, riccati=riccati)
        lags = [q] * len(cfg.horizons)
    else:
        lags = cfg.lags()
    cells = _cell_args(cfg, lags, setup)
    args = [(m, setup, rec, truth.states, cfg.T_final, N, q, w, repeats, cfg.eviction_rule)
            for m, N, q, w in cells]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(run_cell, *zip(*args)))
    else:
        rows = [run_cell(*a) for a in args]

    norms = coupling_norms(setup.sys, max([q for q in lags] + [0]), riccati)
    mhe_time = {r.N: r.time_ms for r in rows if r.method == "mhe" and r.status == "ok"}
    for r in rows:
        if r.method == "mwmhe":
            r.coupling_norm = float(norms[r.N_FC])
            base = mhe_time.get(r.N)
            if base and r.status == "ok":
                r.time_reduction_pct = (r.time_ms - base) / base * 100.0
    return BenchmarkReport(cfg, truth, rec, rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return format(float(v), ".16e")


def emit_report(report: BenchmarkReport, out_dir, timing_in_summary: Optional[bool] = None):
    """Write ``summary.csv``, ``timing.csv``, estimate series and ledger traces.

    Wall-clock columns of ``summary.csv`` stay empty unless
    ``timing_in_summary`` is set, so the summary is byte-identical for a fixed
    seed; measured times always go to ``timing.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if timing_in_summary is None:
        timing_in_summary = report.config.timing_in_summary
    written = []
    with open(out / "summary.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(SUMMARY_COLUMNS)
        for r in report.rows:
            wr.writerow([
                r.method, r.N, "" if r.N_FC is None else r.N_FC, _fmt(r.mse),
                _fmt(r.time_ms) if timing_in_summary else "",
                _fmt(r.time_reduction_pct) if timing_in_summary else "",
                _fmt(r.coupling_norm), r.window, r.status,
            ])
    written.append(out / "summary.csv")
    with open(out / "timing.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(TIMING_COLUMNS)
        for r in report.rows:
            wr.writerow([r.method, r.N, "" if r.N_FC is None else r.N_FC, _fmt(r.time_ms),
                         _fmt(r.time_reduction_pct)])
    written.append(out / "timing.csv")

    truth = report.truth.states
    n = truth.shape[1]
    for r in report.rows:
        if r.estimates is None:
            continue
        path = out / f"estimates_{r.method}_{r.N}.csv"
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t"] + [f"true_x{i}" for i in range(n)] + [f"est_x{i}" for i in range(n)])
            for k, est in enumerate(r.estimates, start=1):
                wr.writerow([k] + [_fmt(v) for v in truth[k]] + [_fmt(v) for v in est])
        written.append(path)
        if r.series is not None and r.method == "mwmhe":
            lp = out / f"ledger_{r.method}_{r.N}.jsonl"
            r.series.write_trace(lp)
            written.append(lp)
    return written
