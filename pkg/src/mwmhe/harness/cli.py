"""Command-line entry point ``mwmhe``."""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from ..dkf import coupling_norms, riccati_steady_state, select_horizon
from ..errors import (
    ConfigError, DivergenceError, InfeasibleDynamicsError, LedgerError, QPError,
    SelectionError, SingularUpdateError, StructuralError,
)
from ..model import load_system, validate_system
from .bench import (
    BenchmarkReport, emit_report, generate_data, resolve_system, run_benchmark,
    run_cell,
)
from .config import load_config

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the configured RNG seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--repeats", type=int, help="timed repeats per grid cell")
    common.add_argument("--workers", type=int, help="grid cells run in parallel")
    common.add_argument("--eviction-rule", choices=("text", "flowchart"),
                        help="when fixed windows leave the problem")

    p = argparse.ArgumentParser(prog="mwmhe", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check the structural assumptions of a system file")
    s.add_argument("system")

    s = sub.add_parser("simulate", parents=[common], help="generate data for a config")
    s.add_argument("config")

    s = sub.add_parser("tune", help="choose N_FC from a coupling bound")
    s.add_argument("system")
    s.add_argument("--bound", type=float, required=True, help="coupling bound U")
    s.add_argument("--max-lag", type=int, default=1000, help="largest lag searched")

    s = sub.add_parser("estimate", parents=[common], help="run one estimator")
    s.add_argument("config")
    s.add_argument("--method", choices=("fie", "mhe", "mwmhe"), required=True)
    s.add_argument("--N", type=int, help="sliding-window length")
    s.add_argument("--nfc", type=int, help="maximum lag for mwmhe")

    s = sub.add_parser("bench", parents=[common], help="run the configured comparison grid")
    s.add_argument("config")
    s.add_argument("--timing-in-summary", action="store_true",
                   help="also write wall times into summary.csv")
    return p


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "repeats", None):
        cfg.repeats = args.repeats
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    if getattr(args, "eviction_rule", None):
        cfg.eviction_rule = args.eviction_rule
    return cfg


def cmd_validate(args) -> int:
    sys_, _, _ = load_system(args.system)
    report = validate_system(sys_)
    print(report)
    if not report.ok:
        return EXIT_VALIDATION
    try:
        sol = riccati_steady_state(sys_)
        print(f"Riccati iteration converged in {sol.iterations} steps")
    except DivergenceError as exc:
        print(f"warning: {exc}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    traj, rec = generate_data(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    n, m = traj.states.shape[1], rec.y.shape[1]
    with open(out / "simulation.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t"] + [f"x{i}" for i in range(n)] + [f"y{j}" for j in range(m)])
        for k in range(traj.states.shape[0]):
            wr.writerow([k] + [format(v, ".16e") for v in traj.states[k]]
                        + [format(v, ".16e") for v in rec.y[k]])
    print(f"wrote {out / 'simulation.csv'} ({traj.T} steps)")
    if traj.violations:
        print(f"note: simulated trajectory violates constraints at {len(traj.violations)} steps")
    return EXIT_OK


def cmd_tune(args) -> int:
    sys_, _, _ = load_system(args.system)
    sol = riccati_steady_state(sys_)
    q = select_horizon(sys_, args.bound, q_max=args.max_lag, riccati=sol)
    norm = coupling_norms(sys_, q, sol)[q]
    print(f"N_FC = {q}  (coupling norm {norm:.6e} <= {args.bound:g})")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _config(args)
    setup = resolve_system(cfg)
    truth, rec = generate_data(cfg, setup)
    N = args.N if args.N is not None else (cfg.T_final if args.method == "fie" else cfg.horizons[0])
    nfc = None
    if args.method == "mwmhe":
        if args.nfc is not None:
            nfc = args.nfc
        elif cfg.U is not None:
            nfc = select_horizon(setup.sys, cfg.U)
        else:
            raise ConfigError("mwmhe needs --nfc or a coupling bound U in the config")
    row = run_cell(args.method, setup, rec, truth.states, cfg.T_final, N, nfc, N,
                   1, cfg.eviction_rule)
    if row.status != "ok":
        print(row.status, file=sys.stderr)
        return EXIT_NUMERICAL
    report = BenchmarkReport(cfg, truth, rec, [row])
    emit_report(report, cfg.out, timing_in_summary=True)
    print(f"{args.method} N={N}" + (f" N_FC={nfc}" if nfc is not None else "")
          + f": mse={row.mse:.6e}, time={row.time_ms:.1f} ms")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    report = run_benchmark(cfg)
    emit_report(report, cfg.out, timing_in_summary=args.timing_in_summary or None)
    failed = [r for r in report.rows if r.status != "ok"]
    for r in report.rows:
        extra = ""
        if r.method == "mwmhe":
            extra = f" N_FC={r.N_FC} reduction={_pct(r.time_reduction_pct)} coupling={r.coupling_norm:.4f}"
        print(f"{r.method:6s} N={r.N:<4d} mse={r.mse:.4f} time={r.time_ms:.1f}ms{extra} [{r.status}]")
    print(f"wrote {cfg.out}/summary.csv")
    return EXIT_NUMERICAL if failed else EXIT_OK


def _pct(v) -> str:
    return "n/a" if v is None else f"{v:+.1f}%"


COMMANDS = {
    "validate": cmd_validate, "simulate": cmd_simulate, "tune": cmd_tune,
    "estimate": cmd_estimate, "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, StructuralError, InfeasibleDynamicsError, SelectionError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (QPError, DivergenceError, SingularUpdateError, LedgerError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
