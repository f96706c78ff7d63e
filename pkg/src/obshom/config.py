"""Run configuration: schema, defaults and round-trip serialisation.

A config file (YAML or JSON) has the top-level keys::

    seed: 0
    out_dir: out                  # overridden by $OBSHOM_OUT_DIR, then --out-dir
    medium: {dim, law, gamma_bar, gamma_lower, M, shape_kind, box_aspect}
    grid: {cells, mode}
    experiment: {...}             # keys depend on the subcommand, see EXPERIMENT_DEFAULTS

Unknown keys anywhere are rejected with the offending dotted path.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .media import MediumConfig

COMMANDS = ("capacity", "ell", "alpha0", "corrector", "solve-eps", "solve-aux", "solve-hom", "converge")
OUT_DIR_ENV = "OBSHOM_OUT_DIR"

TOP_KEYS = {"seed", "out_dir", "medium", "grid", "experiment"}
MEDIUM_KEYS = {"dim", "law", "gamma_bar", "gamma_lower", "M", "shape_kind", "box_aspect"}
GRID_DEFAULTS = {"cells": None, "mode": "auto"}

EXPERIMENT_DEFAULTS = {
    "capacity": {"shape": {"kind": "ball", "radius": 0.25}, "n": 3, "h": 1 / 32, "box_radius": 1.0,
                 "boundary": "farfield", "profile_radii": None},
    "ell": {"alpha": 1.0, "t": None, "samples": None, "m": None},
    "alpha0": {"t": None, "samples": None, "m": None, "theta": 0.005, "rtol": 0.01},
    "corrector": {"eps_list": [0.5, 1 / 3, 0.25], "alpha0": None, "p": 2.0, "t": None, "samples": None, "m": None},
    "solve-eps": {"eps": 0.25, "f": -1.0, "solver": "pdas"},
    "solve-aux": {"alpha": 1.0, "t": 4, "m": None},
    "solve-hom": {"alpha0": 0.0, "f": -1.0, "method": "picard", "dim": 2},
    "converge": {"eps_list": [0.5, 1 / 3, 0.25], "alpha0": None, "f": -1.0, "seeds": 1, "t": None,
                 "samples": None, "m": None},
}

NEEDS_MEDIUM = {"ell", "alpha0", "corrector", "solve-eps", "solve-aux", "converge"}


class ConfigError(ValueError):
    """Schema violation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class RunConfig:
    command: str
    medium: MediumConfig | None
    grid: dict
    experiment: dict
    seed: int = 0
    out_dir: str = "out"
    defaults_filled: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "medium": None if self.medium is None else self.medium.to_dict(),
            "grid": dict(self.grid),
            "experiment": copy.deepcopy(self.experiment),
        }


def load_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file not found")
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    return data


def _reject_unknown(d: dict, allowed, path: str) -> None:
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{path}.{extra[0]}" if path else extra[0], "unknown key")


def set_dotted(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise ConfigError(dotted, "cannot set a key below a non-mapping")
    cur[keys[-1]] = value


def parse_config(command: str, data: dict | str | Path | None = None, overrides: dict | None = None,
                 env: dict | None = None) -> RunConfig:
    """Validate ``data`` for ``command``, fill defaults and apply dotted ``overrides``."""
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown subcommand {command!r}")
    if isinstance(data, (str, Path)):
        data = load_file(data)
    data = copy.deepcopy(data or {})
    for k, v in (overrides or {}).items():
        set_dotted(data, k, v)
    _reject_unknown(data, TOP_KEYS, "")
    env = os.environ if env is None else env
    filled = []

    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed", "must be an integer")
    if "seed" not in data:
        filled.append("seed")
    out_dir = data.get("out_dir") or env.get(OUT_DIR_ENV) or "out"
    if "out_dir" in (overrides or {}):
        out_dir = overrides["out_dir"]

    medium = None
    mraw = data.get("medium")
    if mraw is not None:
        if not isinstance(mraw, dict):
            raise ConfigError("medium", "must be a mapping")
        _reject_unknown(mraw, MEDIUM_KEYS, "medium")
        for key in ("dim", "law", "gamma_bar"):
            if key not in mraw:
                raise ConfigError(f"medium.{key}", "required")
        mraw = dict(mraw)
        if "gamma_bar" in mraw and "law" in mraw and isinstance(mraw["law"], dict):
            _check_law_fields(mraw["law"], mraw["gamma_bar"], "medium.law")
        try:
            medium = MediumConfig.from_dict(mraw)
        except (TypeError, ValueError) as exc:
            raise ConfigError("medium", str(exc)) from None
    elif command in NEEDS_MEDIUM:
        raise ConfigError("medium", f"required for {command}")

    graw = data.get("grid") or {}
    _reject_unknown(graw, GRID_DEFAULTS, "grid")
    grid = dict(GRID_DEFAULTS)
    grid.update(graw)
    filled += [f"grid.{k}" for k in GRID_DEFAULTS if k not in graw]
    if grid["mode"] not in ("auto", "resolved", "point"):
        raise ConfigError("grid.mode", "must be auto, resolved or point")
    if grid["cells"] is not None and (not isinstance(grid["cells"], int) or grid["cells"] < 3):
        raise ConfigError("grid.cells", "must be an integer >= 3")

    eraw = data.get("experiment") or {}
    defaults = EXPERIMENT_DEFAULTS[command]
    _reject_unknown(eraw, defaults, "experiment")
    experiment = copy.deepcopy(defaults)
    experiment.update(copy.deepcopy(eraw))
    filled += [f"experiment.{k}" for k in defaults if k not in eraw]
    _fill_dim_defaults(command, experiment, medium)
    _validate_experiment(command, experiment)
    return RunConfig(command, medium, grid, experiment, seed, str(out_dir), filled)


def _check_law_fields(law: dict, gamma_bar: float, path: str) -> None:
    for key in ("gamma", "gamma_lo", "gamma_hi"):
        v = law.get(key)
        if isinstance(v, (int, float)) and (v < 0 or v > gamma_bar * (1 + 1e-12)):
            raise ConfigError(f"{path}.{key}", f"value {v} outside [0, gamma_bar={gamma_bar}]")


def _fill_dim_defaults(command: str, exp: dict, medium: MediumConfig | None) -> None:
    from .effective import DEFAULT_M, DEFAULT_SAMPLES, DEFAULT_T

    if medium is None:
        return
    n = medium.dim
    if "t" in exp and exp["t"] is None and command != "solve-aux":
        exp["t"] = list(DEFAULT_T[n])
    if "samples" in exp and exp["samples"] is None:
        exp["samples"] = DEFAULT_SAMPLES[n]
    if "m" in exp and exp["m"] is None:
        exp["m"] = DEFAULT_M[n]


def _validate_experiment(command: str, exp: dict) -> None:
    def num(key, lo=None, strict=False):
        v = exp[key]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise ConfigError(f"experiment.{key}", "must be a finite number")
        if lo is not None and (v <= lo if strict else v < lo):
            raise ConfigError(f"experiment.{key}", f"must be {'>' if strict else '>='} {lo}")

    if "eps_list" in exp:
        el = exp["eps_list"]
        if not isinstance(el, list) or not el or any(not 0 < e < 1 for e in el):
            raise ConfigError("experiment.eps_list", "must be a nonempty list of numbers in (0, 1)")
        if any(b >= a for a, b in zip(el, el[1:])):
            raise ConfigError("experiment.eps_list", "must be decreasing")
    if command == "solve-aux":
        num("alpha")
    if command == "ell":
        alphas = exp["alpha"] if isinstance(exp["alpha"], list) else [exp["alpha"]]
        if not alphas or any(not isinstance(a, (int, float)) or isinstance(a, bool) or not math.isfinite(a)
                             for a in alphas):
            raise ConfigError("experiment.alpha", "must be a finite number or a nonempty list of them")
    if command == "solve-hom":
        if exp["dim"] not in (2, 3):
            raise ConfigError("experiment.dim", "must be 2 or 3")
        if exp["method"] not in ("picard", "newton"):
            raise ConfigError("experiment.method", "must be picard or newton")
    if command == "capacity":
        num("h", 0, strict=True)
        if exp["n"] not in (2, 3):
            raise ConfigError("experiment.n", "must be 2 or 3")
    if command == "solve-eps":
        num("eps", 0, strict=True)
    if "f" in exp:
        num("f")
    if exp.get("alpha0") is not None:
        num("alpha0", 0)
    if command == "converge":
        s = exp["seeds"]
        if not (isinstance(s, int) and s >= 1) and not (isinstance(s, list) and all(isinstance(x, int) for x in s)):
            raise ConfigError("experiment.seeds", "must be a positive count or a list of integers")
    if "m" in exp and exp["m"] is not None and (exp["m"] < 5 or exp["m"] % 2 == 0):
        raise ConfigError("experiment.m", "must be odd and >= 5")


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2)
