"""Run configuration and JSON instance parsing for the command line."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any

import numpy as np

from .layered import LayerParams
from .vaidya import VaidyaParams

SCHEMA_VERSION = "1"
U64_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Malformed instance or configuration."""


def number(v: Any, what: str = "value") -> float:
    """Parse a JSON number or a decimal string."""
    if isinstance(v, bool):
        raise ConfigError(f"{what}: expected a number, got a boolean")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return float(Decimal(v.strip()))
        except InvalidOperation as exc:
            raise ConfigError(f"{what}: cannot parse {v!r} as a decimal") from exc
    raise ConfigError(f"{what}: expected a number, got {type(v).__name__}")


def integer(v: Any, what: str = "value") -> int:
    if isinstance(v, str):
        try:
            d = Decimal(v.strip())
        except InvalidOperation as exc:
            raise ConfigError(f"{what}: cannot parse {v!r} as an integer") from exc
    elif isinstance(v, int) and not isinstance(v, bool):
        d = Decimal(v)
    elif isinstance(v, float) and v.is_integer():
        d = Decimal(int(v))
    else:
        raise ConfigError(f"{what}: expected an integer")
    if d != d.to_integral_value():
        raise ConfigError(f"{what}: {v!r} is not an integer")
    return int(d)


def vector(v: Any, what: str) -> np.ndarray:
    if not isinstance(v, list):
        raise ConfigError(f"{what}: expected a list")
    return np.array([number(x, what) for x in v], dtype=np.float64)


def matrix(v: Any, what: str) -> np.ndarray:
    if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
        raise ConfigError(f"{what}: expected a non-empty list of rows")
    rows = [vector(r, what) for r in v]
    if len({r.size for r in rows}) != 1:
        raise ConfigError(f"{what}: rows differ in length")
    return np.vstack(rows)


def load_json(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def check_schema(data: dict, kind: str) -> None:
    ver = str(data.get("schema_version", ""))
    if ver != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {ver!r} (expected {SCHEMA_VERSION!r})")
    if data.get("kind") != kind:
        raise ConfigError(f"instance kind is {data.get('kind')!r}, expected {kind!r}")


_RANGES: dict[str, tuple[float, float]] = {
    "c1": (0.0, 1.0),
    "delta": (0.0, 1.0),
    "c2": (0.0, 1.0),
    "damping": (0.0, 1.0),
    "C_iter": (0.0, math.inf),
    "slack_cap": (0.0, 1.0),
}


@dataclass
class RunConfig:
    """Solver parameters shared by every command."""

    vaidya_overrides: dict = field(default_factory=dict)
    layer_overrides: dict = field(default_factory=dict)
    eps_eq: float | None = None
    saddle_eps: float = 0.05
    timing: bool = True
    bench: dict = field(default_factory=dict)

    def params(self, dim: int, seed: int, base: VaidyaParams | None = None) -> VaidyaParams:
        """``base`` (the command's default profile) with the configured overrides."""
        base = base if base is not None else VaidyaParams.desk()
        layers = LayerParams.desk(dim, seed=seed, **self.layer_overrides)
        return replace(base, layers=layers, **self.vaidya_overrides)


def parse_config(data: dict | None) -> RunConfig:
    if not data:
        return RunConfig()
    known = {"schema_version", "vaidya", "layers", "eps_eq", "saddle_eps", "timing", "bench"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    v = dict(data.get("vaidya", {}))
    names = {f.name for f in fields(VaidyaParams)} - {"layers"}
    bad = set(v) - names
    if bad:
        raise ConfigError(f"unknown solver parameters: {sorted(bad)}")
    kw: dict[str, Any] = {}
    for k, val in v.items():
        if k in ("exact_leverage",):
            kw[k] = bool(val)
        elif k in ("max_newton", "max_halvings", "audit_every"):
            kw[k] = integer(val, k)
            if kw[k] < 0:
                raise ConfigError(f"{k} must be non-negative")
        else:
            x = number(val, k)
            lo, hi = _RANGES.get(k, (0.0, math.inf))
            if not lo < x <= hi:
                raise ConfigError(f"{k} = {x} is outside ({lo}, {hi}]")
            kw[k] = x
    VaidyaParams.desk(**kw)
    layers = dict(data.get("layers", {}))
    lnames = {f.name for f in fields(LayerParams)} - {"seed"}
    if set(layers) - lnames:
        raise ConfigError(f"unknown layer parameters: {sorted(set(layers) - lnames)}")
    lo: dict[str, Any] = {}
    for k, val in layers.items():
        lo[k] = integer(val, k) if k in ("T_inn", "T_mid", "T_out", "r_out", "N", "L") else number(val, k)
    try:
        LayerParams.desk(2, **lo)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    eps_eq = data.get("eps_eq")
    cfg = RunConfig(
        vaidya_overrides=kw,
        layer_overrides=lo,
        eps_eq=None if eps_eq is None else number(eps_eq, "eps_eq"),
        saddle_eps=number(data.get("saddle_eps", 0.05), "saddle_eps"),
        timing=bool(data.get("timing", True)),
        bench=dict(data.get("bench", {})),
    )
    if not 0 < cfg.saddle_eps <= 0.5:
        raise ConfigError("saddle_eps must lie in (0, 1/2]")
    if cfg.eps_eq is not None and not cfg.eps_eq > 0:
        raise ConfigError("eps_eq must be positive")
    return cfg


def check_seed(seed: int) -> int:
    if not 0 <= seed <= U64_MAX:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return seed
