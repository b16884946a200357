"""Line-oriented run configuration: `key = value` entries under
`[section]` headers. Unknown sections or keys are errors, and values are
validated at parse time; serialization is canonical so that
serialize(parse(text)) is a fixed point.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def _as_bool(raw: str, where: str) -> bool:
    try:
        return _BOOL[raw.strip().lower()]
    except KeyError:
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}") from None


def _as_float(raw: str, where: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: expected a number, got {raw!r}") from None


def _as_int(raw: str, where: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{where}: expected an integer, got {raw!r}") from None


# every section with its known keys and value kinds
_SCHEMA = {
    "run": {"scenario": "str", "seed": "int", "until": "float"},
    "model": {"kind": "str", "v_max": "float", "kernel_radius": "float",
              "eps_self": "float", "eps_other": "float", "deviation": "float",
              "prey_base_direction": "str", "blend_width": "float"},
    "solver": {"cfl": "float", "nonlocal_update": "str", "picard_tol": "float",
               "picard_max_iter": "int", "dt_max": "float",
               "frame_stride": "int", "store_stride": "int"},
    "output": {"frames": "bool", "rho_display": "float"},
    "grid": {"nx": "int", "ny": "int", "dx": "float", "dy": "float",
             "origin_x": "float", "origin_y": "float"},
    "mask": {"bitmap": "str", "exits": "str"},
    "initial": {"blobs": "str", "amplitude": "float"},
}

_CONVERT = {"str": lambda raw, where: raw.strip(),
            "int": _as_int, "float": _as_float, "bool": _as_bool}


@dataclass(frozen=True)
class RunConfig:
    """Validated run request: a scenario name plus typed overrides."""

    scenario: str = "corridor"
    seed: int = 0
    until: float | None = None
    model: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    mask: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    base_dir: str = "."


def _validate(cfg: RunConfig) -> RunConfig:
    from .scenarios import SCENARIO_NAMES

    if cfg.scenario not in SCENARIO_NAMES:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}; "
                          f"choose one of {sorted(SCENARIO_NAMES)}")
    cfl = cfg.solver.get("cfl")
    if cfl is not None and not (0.0 < cfl <= 0.5):
        raise ConfigError(f"solver.cfl must lie in (0, 0.5] for the split "
                          f"scheme, got {cfl}")
    upd = cfg.solver.get("nonlocal_update")
    if upd is not None and upd not in ("explicit", "picard"):
        raise ConfigError(f"solver.nonlocal_update must be 'explicit' or "
                          f"'picard', got {upd!r}")
    for key in ("picard_tol", "dt_max"):
        v = cfg.solver.get(key)
        if v is not None and v <= 0:
            raise ConfigError(f"solver.{key} must be positive")
    for key in ("picard_max_iter", "frame_stride", "store_stride"):
        v = cfg.solver.get(key)
        if v is not None and v < 1:
            raise ConfigError(f"solver.{key} must be >= 1")
    for key in ("v_max", "kernel_radius", "blend_width"):
        v = cfg.model.get(key)
        if v is not None and v <= 0:
            raise ConfigError(f"model.{key} must be positive")
    for key in ("eps_self", "eps_other", "deviation"):
        v = cfg.model.get(key)
        if v is not None and v < 0:
            raise ConfigError(f"model.{key} must be nonnegative")
    pb = cfg.model.get("prey_base_direction")
    if pb is not None and pb not in ("nu", "ones"):
        raise ConfigError("model.prey_base_direction must be 'nu' or 'ones'")
    kind = cfg.model.get("kind")
    if kind is not None and kind not in ("panic", "orderly"):
        raise ConfigError("model.kind for custom scenarios must be 'panic' or 'orderly'")
    if cfg.until is not None and cfg.until <= 0:
        raise ConfigError("run.until must be positive")
    rd = cfg.output.get("rho_display")
    if rd is not None and rd <= 0:
        raise ConfigError("output.rho_display must be positive")
    if cfg.scenario == "custom":
        if not cfg.grid:
            raise ConfigError("custom scenarios need a [grid] section")
        for key in ("nx", "ny", "dx", "dy"):
            if key not in cfg.grid:
                raise ConfigError(f"custom scenarios need grid.{key}")
        if "blobs" not in cfg.initial:
            raise ConfigError("custom scenarios need initial.blobs")
    return cfg


def parse_config_text(text: str, base_dir: str = ".") -> RunConfig:
    """Parse and validate configuration text."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#",), strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    data = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        known = _SCHEMA[section]
        out = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            out[key] = _CONVERT[known[key]](raw, f"{section}.{key}")
        data[section] = out

    run = data.pop("run", {})
    cfg = RunConfig(scenario=run.get("scenario", "corridor"),
                    seed=run.get("seed", 0),
                    until=run.get("until"),
                    model=data.pop("model", {}),
                    solver=data.pop("solver", {}),
                    output=data.pop("output", {}),
                    grid=data.pop("grid", {}),
                    mask=data.pop("mask", {}),
                    initial=data.pop("initial", {}),
                    base_dir=base_dir)
    return _validate(cfg)


def parse_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), base_dir=str(p.parent))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form: sections and keys in schema order, one
    `key = value` line each."""
    sections = {"run": {"scenario": cfg.scenario, "seed": cfg.seed},
                "model": cfg.model, "solver": cfg.solver,
                "output": cfg.output, "grid": cfg.grid, "mask": cfg.mask,
                "initial": cfg.initial}
    if cfg.until is not None:
        sections["run"]["until"] = cfg.until
    buf = io.StringIO()
    for name in _SCHEMA:
        content = sections.get(name) or {}
        if not content:
            continue
        buf.write(f"[{name}]\n")
        for key in _SCHEMA[name]:
            if key in content:
                buf.write(f"{key} = {_fmt(content[key])}\n")
        buf.write("\n")
    return buf.getvalue()
