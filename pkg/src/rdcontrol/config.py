"""Run configuration: TOML file -> validated :class:`RunConfig`.

Precedence is ``--set`` overrides > file > defaults. Defaults reproduce the
Nodal-Lefty experiments: 10 um cells on an 800 um square, 0.5 h steps,
``mu = 1``, ``lam = 1e-12`` and controls boxed in ``[0, 1]``.
"""
from __future__ import annotations

import copy
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .fieldio import read_rdf
from .forward import TimeGrid
from .grid import Grid2D
from .model import (MINUTES_PER_HOUR, Activator, Inhibitor, InputGainSpec, ModelSpec, RegulatorySpec,
                    nodal_lefty_preset)
from .optim import OptimConfig

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


DEFAULTS: dict[str, Any] = {
    "grid": {"nx": 80, "ny": 80, "dx": 10.0, "dy": 10.0},
    "time": {"T": 2000.0, "dt": 0.5, "checkpoint_stride": 100, "control_stride": 1},
    "model": {"preset": "nodal-lefty", "alpha_n": 0.8, "alpha_l": 4.0},
    "cost": {"mu": 1.0, "lam": 1e-12, "target": None},
    "bounds": {"lower": [0.0, 0.0], "upper": [1.0, 1.0]},
    "optimizer": {"max_iters": 60, "tol_stat": 1e-6, "c1": 1e-4, "backtrack": 0.5,
                  "max_backtracks": 40, "restart_every": 20, "pr_plus": True},
    "initial": {"file": None, "seed": 0, "low": 10.0, "high": 100.0, "blob_scale": 30.0,
                "passes": 2, "settle_T": 0.0},
    "target": {"alpha_n": 0.5, "alpha_l": 4.0, "T_pattern": None, "seed": None},
    "gradcheck": {"n_dirs": 5, "eps": [1e-3, 1e-4, 1e-5, 1e-6], "tol": 1e-6,
                  "duality_tol": 1e-12, "seed": 0},
    "render": {"field": None, "species": None, "compare": None, "upscale": 4, "out": None,
               "archive": None, "snapshot_stride": 1},
    "metrics": {"achieved": None, "target": None},
    "output": {"dir": "rdctl-out"},
    "deterministic": True,
}

_MODEL_KEYS = {"preset", "alpha_n", "alpha_l", "beta_n", "beta_l", "units", "species", "diffusion",
               "degradation", "alpha", "alpha_file", "gains", "regulatory"}


@dataclass
class RunConfig:
    grid: Grid2D
    time_grid: TimeGrid
    checkpoint_stride: int
    control_stride: int
    model: ModelSpec
    mu: float
    lam: float
    target_path: Path | None
    lower: np.ndarray
    upper: np.ndarray
    optim: OptimConfig
    initial: dict
    target: dict
    gradcheck: dict
    render: dict
    metrics: dict
    output_dir: Path
    deterministic: bool
    raw: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def resolve(self, p) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        key = f"{path}.{k}" if path else k
        if k not in base:
            if path != "model" or k not in _MODEL_KEYS:
                warnings.warn(f"unknown config key {key!r}", stacklevel=3)
            out[k] = v
        elif isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, key)
        else:
            out[k] = v
    return out


def parse_override(item: str) -> tuple[list[str], Any]:
    """``"cost.lam=1e-6"`` -> ``(["cost", "lam"], 1e-6)``; bare words stay strings."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, val = item.split("=", 1)
    try:
        value = tomllib.loads(f"v = {val}")["v"]
    except tomllib.TOMLDecodeError:
        value = val
    return key.strip().split("."), value


def apply_overrides(data: dict, overrides) -> dict:
    data = copy.deepcopy(data)
    for item in overrides or ():
        keys, value = parse_override(item)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError("cannot override inside a non-table value", ".".join(keys))
        node[keys[-1]] = value
    return data


def _num(d: dict, key: str, path: str, *, positive=False, nonneg=False, integer=False):
    v = d.get(key)
    full = f"{path}.{key}"
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", full)
    if integer and int(v) != v:
        raise ConfigError(f"expected an integer, got {v!r}", full)
    if positive and not v > 0:
        raise ConfigError(f"must be positive, got {v!r}", full)
    if nonneg and v < 0:
        raise ConfigError(f"must be nonnegative, got {v!r}", full)
    return int(v) if integer else float(v)


def _build_model(m: dict, grid: Grid2D, base_dir: Path) -> ModelSpec:
    preset = m.get("preset")
    if preset:
        if preset != "nodal-lefty":
            raise ConfigError(f"unknown preset {preset!r}", "model.preset")
        units = m.get("units", "min")
        scale = {"min": 1.0, "h": 1.0 / MINUTES_PER_HOUR}.get(units)
        if scale is None:
            raise ConfigError(f"units must be 'min' or 'h', got {units!r}", "model.units")
        vals = {k: _num(m, k, "model", nonneg=True) for k in ("alpha_n", "alpha_l")}
        betas = {k: _num(m, k, "model", positive=True) * scale for k in ("beta_n", "beta_l") if k in m}
        return nodal_lefty_preset(vals["alpha_n"] * scale, vals["alpha_l"] * scale, **betas)

    units = m.get("units", "h")
    if units not in ("h", "min"):
        raise ConfigError(f"units must be 'min' or 'h', got {units!r}", "model.units")
    rate = MINUTES_PER_HOUR if units == "min" else 1.0
    try:
        species = tuple(m["species"])
        reg = m["regulatory"]
        regulatory = RegulatorySpec(
            tuple(Activator(int(a["index"]), float(a.get("weight", 1.0)), float(a.get("hill", 1.0)))
                  for a in reg["activators"]),
            tuple(Inhibitor(int(b["index"]), float(b["constant"]), float(b.get("hill", 1.0)))
                  for b in reg.get("inhibitors", [])),
            float(reg["K"]), float(reg.get("m", 1.0)))
        gains = InputGainSpec(tuple(tuple(float(c) * rate for c in cs) for cs in m["gains"]))
        if "alpha_file" in m:
            alpha = read_rdf(Path(base_dir) / m["alpha_file"]).values
            grid.check(alpha)
        else:
            alpha = np.asarray(m["alpha"], dtype=float)
        return ModelSpec(np.asarray(m["diffusion"], float) * rate, np.asarray(m["degradation"], float) * rate,
                         alpha * rate, regulatory, gains, species)
    except KeyError as exc:
        raise ConfigError(f"missing key {exc.args[0]!r}", "model") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), "model") from None


def build_config(data: dict, base_dir: Path = Path(".")) -> RunConfig:
    """Validate a merged config mapping and build a :class:`RunConfig`."""
    d = _merge(DEFAULTS, data)
    user_model = data.get("model", {})
    if "species" in user_model and "preset" not in user_model:
        d["model"] = copy.deepcopy(user_model)
    g = d["grid"]
    grid = Grid2D(_num(g, "nx", "grid", positive=True, integer=True),
                  _num(g, "ny", "grid", positive=True, integer=True),
                  _num(g, "dx", "grid", positive=True), _num(g, "dy", "grid", positive=True))
    t = d["time"]
    T = _num(t, "T", "time", positive=True)
    dt = _num(t, "dt", "time", positive=True)
    if dt > T:
        raise ConfigError(f"dt={dt} exceeds T={T}", "time.dt")
    time_grid = TimeGrid.fit(T, dt)
    cps = _num(t, "checkpoint_stride", "time", positive=True, integer=True)
    cs = _num(t, "control_stride", "time", positive=True, integer=True)

    model = _build_model(d["model"], grid, base_dir)

    c = d["cost"]
    mu = _num(c, "mu", "cost", positive=True)
    lam = _num(c, "lam", "cost", nonneg=True)

    b = d["bounds"]
    try:
        lower = np.broadcast_to(np.asarray(b["lower"], float), (model.n,)).copy()
        upper = np.broadcast_to(np.asarray(b["upper"], float), (model.n,)).copy()
    except ValueError:
        raise ConfigError(f"bounds must be a scalar or {model.n} values", "bounds") from None
    if np.any(lower > upper):
        raise ConfigError("bounds reversed (lower > upper)", "bounds")
    if np.any(lower < 0):
        raise ConfigError("lower bounds must be nonnegative", "bounds.lower")
    try:
        model.gains.check_nonnegative(lower, upper)
    except ValueError as exc:
        raise ConfigError(str(exc), "model.gains") from None

    o = d["optimizer"]
    try:
        optim = OptimConfig(**{k: o[k] for k in o})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "optimizer") from None
    _num(o, "tol_stat", "optimizer", positive=True)

    ini = d["initial"]
    if ini["file"] is None:
        if ini["low"] > ini["high"]:
            raise ConfigError("low exceeds high", "initial")
        _num(ini, "blob_scale", "initial", positive=True)
    tgt = d["target"]
    if tgt["T_pattern"] is None:
        tgt["T_pattern"] = time_grid.T
    if tgt["seed"] is None:
        tgt["seed"] = ini["seed"]

    return RunConfig(grid, time_grid, cps, cs, model, mu, lam,
                     Path(c["target"]) if c["target"] else None, lower, upper, optim, ini, tgt,
                     d["gradcheck"], d["render"], d["metrics"], Path(d["output"]["dir"]),
                     bool(d["deterministic"]), d, Path(base_dir))


def load_config(path=None, overrides=None) -> RunConfig:
    """Read a TOML file (optional), apply ``key=value`` overrides and validate."""
    data: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            data = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"parse error in {path}: {exc}") from None
        base = path.parent
    data = apply_overrides(data, overrides)
    return build_config(data, base)
