"""Compare the compiled and pure-Python kernel backends.

Run ``python3 benchmarks/bench_kernels.py``. Kernel timings call each backend
directly; the end-to-end row runs an MHE pass in a subprocess per backend
because the backend is fixed at import.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mwmhe import _kernels as K

END_TO_END = """
import time
from mwmhe.harness import synthetic_system
from mwmhe.harness.bench import step_schedule
from mwmhe.harness.synthetic import default_disturbance
from mwmhe.model import simulate
from mwmhe.estimators import mhe_run
import numpy as np
sys_, cons, prior = synthetic_system()
rng = np.random.Generator(np.random.PCG64(0))
T = {T}
w = rng.standard_normal((T, 3)); v = np.sqrt(0.1) * rng.standard_normal((T, 2))
tr, rec = simulate(sys_, cons, np.zeros(4), process_noise=w, measurement_noise=v, T=T,
                   free_channels=[3], free_series=step_schedule(default_disturbance(), T))
t0 = time.perf_counter(); mhe_run(sys_, cons, prior, rec, {N}); print(time.perf_counter() - t0)
"""


def _spd_band(n: int, p: int, rng) -> np.ndarray:
    ab = 0.1 * rng.standard_normal((p + 1, n))
    ab[0] = 2.0 * (p + 1) + rng.random(n)
    return ab


def kernel_cases(n: int, p: int, m: int, rng):
    ab = _spd_band(n, p, rng)
    b = rng.standard_normal(n)
    vals = rng.standard_normal((m, p + 1))
    starts = np.sort(rng.integers(0, n - p, m))
    wts = rng.random(m)
    y = rng.standard_normal(m)
    L = ab.copy(order="C")
    K.band_cholesky(L)

    def chol(be):
        return lambda: be.band_cholesky(ab.copy(order="C"))

    return {
        "band_cholesky": chol,
        "band_solve": lambda be: (lambda: K.band_solve(L, b, backend=be)),
        "band_add_outer": lambda be: (lambda: K.band_add_outer(ab.copy(), vals, starts, wts, backend=be)),
        "band_symv": lambda be: (lambda: K.band_symv(ab, b, backend=be)),
        "span_matvec": lambda be: (lambda: K.span_matvec(vals, starts, b, backend=be)),
        "span_rmatvec": lambda be: (lambda: K.span_rmatvec(vals, starts, y, n, backend=be)),
    }


def _time(fn, number: int) -> float:
    return min(timeit.repeat(fn, number=number, repeat=5)) / number


def end_to_end(backend: str, T: int, N: int) -> float:
    env = dict(os.environ, MWMHE_PURE_PYTHON="1" if backend == "python" else "0")
    out = subprocess.run([sys.executable, "-c", END_TO_END.format(T=T, N=N)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=124, help="Hessian dimension")
    ap.add_argument("--p", type=int, default=7, help="Hessian half bandwidth")
    ap.add_argument("--m", type=int, default=60, help="inequality rows")
    ap.add_argument("--T", type=int, default=100, help="steps in the end-to-end run")
    ap.add_argument("--N", type=int, default=30, help="MHE window in the end-to-end run")
    args = ap.parse_args(argv)

    if K.compiled_backend is None:
        print("compiled backend not built; only the Python backend is available")
        return
    rng = np.random.default_rng(0)
    cases = kernel_cases(args.n, args.p, args.m, rng)
    print(f"{'kernel':<16s} {'compiled [us]':>14s} {'python [us]':>14s} {'speed-up':>9s}")
    for name, make in cases.items():
        tc = _time(make(K.compiled_backend), 200)
        tp = _time(make(K.python_backend), 20)
        print(f"{name:<16s} {1e6 * tc:14.1f} {1e6 * tp:14.1f} {tp / tc:9.1f}")
    tc = end_to_end("compiled", args.T, args.N)
    tp = end_to_end("python", args.T, args.N)
    print(f"{'MHE run':<16s} {1e3 * tc:12.1f}ms {1e3 * tp:12.1f}ms {tp / tc:9.1f}")


if __name__ == "__main__":
    main()
