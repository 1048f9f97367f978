"""TOML experiment configs.

A config names the problem ``kind``, the risk aversion ``gamma`` and initial
wealth ``x0`` at the top level, and has these sections:

``[scenario]``
    ``T``, ``sigma_floor`` and one sub-table per coefficient
    (``[scenario.r]``, ``[scenario.b]``, ``[scenario.sigma]``; optional
    ``[scenario.l]`` and ``[scenario.h]`` for the general problem).  Each
    sub-table has ``kind = "constant" | "time" | "brownian"``.
``[claim]``
    ``kind = "constant" | "linear" | "tanh"`` for hedging.
``[grid]``
    ``n_paths``, ``n_steps``, ``seed``.
``[verify]``, ``[compare]``, ``[checks]``, ``[output]``
    optional; see :class:`ExperimentConfig`.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .hedging import BoundedSmoothClaim, ConstantClaim, LinearClaim
from .market import BrownianFunction, Constant, MarketScenario, TimeFunction, build_scenario

KINDS = ("mean-variance", "hedging", "general", "open-loop-compare")


@dataclass(frozen=True)
class GridConfig:
    n_paths: int = 100_000
    n_steps: int = 200
    seed: int = 0


@dataclass(frozen=True)
class VerifyConfig:
    enabled: bool = True
    times: Optional[tuple] = None
    amounts: tuple = (1.0, -1.0, 5.0, -5.0)
    eps: Optional[float] = None
    ladder: tuple = (1.0, 0.5, 0.25)
    adaptive: bool = True
    power_check: bool = False
    phi_scale: float = 2.0
    n_se: float = 3.0
    power_n_se: float = 5.0


@dataclass(frozen=True)
class CompareConfig:
    method: str = "shared"
    tol: float = 0.02


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    dump_paths: int = 16


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    scenario: MarketScenario
    gamma: float = 0.0
    x0: float = 1.0
    claim: Optional[object] = None
    l: Optional[object] = None
    h: Optional[object] = None
    grid: GridConfig = field(default_factory=GridConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    checks: dict = field(default_factory=dict)
    source: Optional[str] = None

    def with_overrides(self, *, paths=None, steps=None, seed=None, out=None) -> "ExperimentConfig":
        g = self.grid
        g = replace(g, n_paths=paths if paths is not None else g.n_paths,
                    n_steps=steps if steps is not None else g.n_steps,
                    seed=seed if seed is not None else g.seed)
        o = self.output if out is None else replace(self.output, dir=str(out))
        _check_grid(g)
        return replace(self, grid=g, output=o)


def _need(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing field {where}.{key}")
    return table[key]


def _num(table: dict, key: str, where: str, default=None) -> float:
    val = table.get(key, default) if default is not None else _need(table, key, where)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"field {where}.{key} must be a number, got {val!r}")
    return float(val)


def parse_coefficient(table, where: str):
    """One coefficient sub-table to a coefficient spec."""
    if isinstance(table, (int, float)) and not isinstance(table, bool):
        return Constant(float(table))
    if not isinstance(table, dict):
        raise ConfigError(f"{where} must be a number or a table")
    kind = _need(table, "kind", where)
    if kind == "constant":
        return Constant(_num(table, "value", where))
    if kind == "time":
        knots = _need(table, "knots", where)
        values = _need(table, "values", where)
        try:
            return TimeFunction(tuple(float(k) for k in knots), tuple(float(v) for v in values))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    if kind == "brownian":
        form = _need(table, "form", where)
        level = _num(table, "level", where, 0.0)
        scale = _num(table, "scale", where)
        bound = table.get("bound")
        bound = None if bound is None else float(bound)
        if form in ("tanh", "sin", "cos"):
            rate = _num(table, "rate", where, 1.0)
            return getattr(BrownianFunction, form)(level, scale, rate, bound)
        if form == "clip":
            return BrownianFunction.clip(level, scale, _num(table, "limit", where), bound)
        raise ConfigError(f"{where}.form must be tanh, sin, cos or clip, got {form!r}")
    raise ConfigError(f"{where}.kind must be constant, time or brownian, got {kind!r}")


def parse_claim(table: dict):
    kind = _need(table, "kind", "claim")
    order = _num(table, "moment_order", "claim", 4.0)
    if kind == "constant":
        return ConstantClaim(_num(table, "value", "claim"), order)
    if kind == "linear":
        return LinearClaim(_num(table, "slope", "claim", 1.0),
                           _num(table, "intercept", "claim", 0.0), order)
    if kind == "tanh":
        c = BoundedSmoothClaim.tanh(_num(table, "scale", "claim", 1.0),
                                    _num(table, "rate", "claim", 1.0))
        return replace(c, moment_order=order)
    raise ConfigError(f"claim.kind must be constant, linear or tanh, got {kind!r}")


def _check_grid(g: GridConfig):
    if g.n_paths < 2 or g.n_steps < 1:
        raise ConfigError("grid needs n_paths >= 2 and n_steps >= 1")


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _tuple(sec: dict, key: str, default):
    val = sec.get(key, default)
    return None if val is None else tuple(float(v) for v in val)


def config_from_dict(raw: dict, source: Optional[str] = None) -> ExperimentConfig:
    """Validate a parsed TOML document.  Raises ``ConfigError`` naming the bad field."""
    kind = raw.get("kind", "mean-variance")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    sc = _section(raw, "scenario")
    if not sc:
        raise ConfigError("missing section [scenario]")
    T = _num(sc, "T", "scenario", 1.0)
    floor = _num(sc, "sigma_floor", "scenario", 1e-4)
    coeffs = {name: parse_coefficient(_need(sc, name, "scenario"), f"scenario.{name}")
              for name in ("r", "b", "sigma")}
    if kind == "hedging" and "claim" not in raw:
        raise ConfigError("missing section [claim]")
    claim = parse_claim(_section(raw, "claim")) if "claim" in raw else None
    scenario = build_scenario(coeffs["r"], coeffs["b"], coeffs["sigma"], T=T, sigma_floor=floor,
                              claim=claim)
    if kind in ("mean-variance", "general", "open-loop-compare") and "gamma" not in raw:
        raise ConfigError("missing field gamma")
    gamma = _num(raw, "gamma", "config", 0.0)
    x0 = _num(raw, "x0", "config", 1.0)
    l = parse_coefficient(sc["l"], "scenario.l") if "l" in sc else None
    h = parse_coefficient(sc["h"], "scenario.h") if "h" in sc else None

    g = _section(raw, "grid")
    grid = GridConfig(int(g.get("n_paths", 100_000)), int(g.get("n_steps", 200)),
                      int(g.get("seed", 0)))
    _check_grid(grid)
    v = _section(raw, "verify")
    verify = VerifyConfig(
        enabled=bool(v.get("enabled", True)),
        times=_tuple(v, "times", None),
        amounts=_tuple(v, "amounts", (1.0, -1.0, 5.0, -5.0)),
        eps=None if v.get("eps") is None else float(v["eps"]),
        ladder=_tuple(v, "ladder", (1.0, 0.5, 0.25)),
        adaptive=bool(v.get("adaptive", True)),
        power_check=bool(v.get("power_check", False)),
        phi_scale=float(v.get("phi_scale", 2.0)),
        n_se=float(v.get("n_se", 3.0)),
        power_n_se=float(v.get("power_n_se", 5.0)),
    )
    c = _section(raw, "compare")
    compare = CompareConfig(str(c.get("method", "shared")), float(c.get("tol", 0.02)))
    if compare.method not in ("shared", "direct"):
        raise ConfigError(f"compare.method must be shared or direct, got {compare.method!r}")
    o = _section(raw, "output")
    output = OutputConfig(str(o.get("dir", "out")), int(o.get("dump_paths", 16)))
    checks = dict(_section(raw, "checks"))
    return ExperimentConfig(kind, scenario, gamma, x0, claim, l, h, grid, verify, compare,
                            output, checks, source)


def load_config(path) -> ExperimentConfig:
    """Read and validate a TOML config file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw, str(path))
