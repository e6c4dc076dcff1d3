"""Experiment configuration files (JSON)."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from ..errors import ConfigError

SYNTHETIC = "synthetic"


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    ``horizons`` are the MHE window lengths. Each multiple-window run pairs a
    horizon ``N`` with sliding length ``mw_window`` and lag ``N_FC``; by
    default ``N_FC = N - mw_window`` so both estimators look ``N`` steps back.
    ``nfc`` overrides the lags one-to-one, ``U`` selects a single lag from the
    coupling bound instead.
    """

    system: str
    T_final: int
    horizons: List[int] = field(default_factory=lambda: [5, 10, 15, 20, 30])
    nfc: Optional[List[int]] = None
    U: Optional[float] = None
    mw_window: int = 1
    process_noise_var: float = 1.0
    measurement_noise_var: float = 0.1
    seed: int = 0
    disturbance: Optional[List[Tuple[int, float]]] = None
    free_channels: Optional[List[int]] = None
    x0: Optional[List[float]] = None
    synthetic: Dict[str, float] = field(default_factory=dict)
    methods: Dict[str, bool] = field(
        default_factory=lambda: {"fie": True, "mhe": True, "mwmhe": True})
    out: str = "results"
    repeats: int = 5
    workers: int = 1
    eviction_rule: str = "text"
    timing_in_summary: bool = False
    base_dir: str = field(default=".", repr=False)

    def system_path(self) -> Optional[Path]:
        if self.system == SYNTHETIC:
            return None
        p = Path(self.system)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def lags(self) -> List[int]:
        """``N_FC`` paired with each horizon (``U`` handled by the runner)."""
        if self.nfc is not None:
            return list(self.nfc)
        return [max(N - self.mw_window, 0) for N in self.horizons]


_KEYS = {f.name for f in fields(ExperimentConfig)} - {"base_dir"}


def _dedupe(values: Sequence[int]) -> List[int]:
    out, seen, dup = [], set(), []
    for v in values:
        if v in seen:
            dup.append(v)
            continue
        seen.add(v)
        out.append(v)
    if dup:
        warnings.warn(f"duplicate horizons {sorted(set(dup))} removed", UserWarning, stacklevel=3)
    return out


def config_from_dict(doc: dict, base_dir=".") -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(doc) - _KEYS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {unknown}")
    for key in ("system", "T_final"):
        if key not in doc:
            raise ConfigError(f"missing required key {key!r}")
    try:
        cfg = ExperimentConfig(**doc, base_dir=str(base_dir))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    """Check semantic constraints and normalize list fields in place."""
    def integer(name, v, lo):
        if isinstance(v, bool) or not isinstance(v, int) or v < lo:
            raise ConfigError(f"{name} must be an integer >= {lo}, got {v!r}")

    integer("T_final", cfg.T_final, 1)
    integer("seed", cfg.seed, 0)
    integer("repeats", cfg.repeats, 1)
    integer("workers", cfg.workers, 1)
    integer("mw_window", cfg.mw_window, 1)
    if not isinstance(cfg.horizons, list):
        raise ConfigError("horizons must be a list")
    for N in cfg.horizons:
        integer("horizon N", N, 1)
    cfg.horizons = _dedupe(cfg.horizons)
    if cfg.horizons and cfg.T_final <= max(cfg.horizons):
        raise ConfigError(f"T_final={cfg.T_final} must exceed the largest horizon {max(cfg.horizons)}")
    if cfg.nfc is not None:
        if cfg.U is not None:
            raise ConfigError("give either nfc or U, not both")
        if len(cfg.nfc) != len(cfg.horizons):
            raise ConfigError("nfc must have one entry per horizon")
        for q in cfg.nfc:
            integer("N_FC", q, 0)
    if cfg.U is not None and not (isinstance(cfg.U, (int, float)) and cfg.U > 0):
        raise ConfigError(f"U must be a positive number, got {cfg.U!r}")
    for name in ("process_noise_var", "measurement_noise_var"):
        v = getattr(cfg, name)
        if not isinstance(v, (int, float)) or v < 0:
            raise ConfigError(f"{name} must be a non-negative number, got {v!r}")
    if cfg.disturbance is not None:
        try:
            cfg.disturbance = sorted((int(t), v) for t, v in cfg.disturbance)
        except (TypeError, ValueError) as exc:
            raise ConfigError("disturbance must be a list of [start, value] pairs") from exc
    if cfg.eviction_rule not in ("text", "flowchart"):
        raise ConfigError(f"eviction_rule must be 'text' or 'flowchart', got {cfg.eviction_rule!r}")
    bad = sorted(set(cfg.methods) - {"fie", "mhe", "mwmhe"})
    if bad:
        raise ConfigError(f"unknown methods {bad}")
    if cfg.system != SYNTHETIC and not cfg.system_path().exists():
        raise ConfigError(f"system file {cfg.system_path()} does not exist")


def load_config(path) -> ExperimentConfig:
    """Read and validate a configuration file; defaults fill missing keys."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return config_from_dict(doc, base_dir=path.parent)
