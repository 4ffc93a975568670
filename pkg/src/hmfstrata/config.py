"""Run configuration: TOML parsing with strict keys, emission and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from pathlib import Path

import tomli
import tomli_w

from .errors import ConfigError

STAGES = ("simulate", "densities", "strata", "gmt", "cover", "report")

# every key with its default; the type of the default is the accepted type
# (ints are accepted where floats are expected)
DEFAULTS = {
    "seed": 0,
    "grid": {
        "n": 3,
        "nodes": 32,
        "lo": -0.5,
        "hi": 0.5,
        "field": "hedgehog",
        "analytic": True,
        "center": [],  # empty: the origin
        "angle": 1.5 * math.pi,
        "radius": 1.0,
        "d": 3,
        "modes": 3,
        "amplitude": 0.6,
    },
    "flow": {
        "scheme": "projected-explicit",
        "dt": 0.0,  # 0 selects h^2 / (4 n) / 2
        "end_time": 0.0,
        "gl_epsilon": 0.1,
        "boundary": "fixed-Dirichlet",
        "record_every": 1,
        "stop_at_unwinding": False,
    },
    "densities": {
        "radii": [0.05, 0.1, 0.2],
        "points": [],  # empty: the grid center
        "cutoff": "none",
        "time_nodes": 33,
        "quadrature": "auto",  # richardson for analytic fields, grid otherwise
        "richardson_nodes": 96,
        "pairs": "adjacent",
        "rel_tol": 1e-9,
    },
    "strata": {
        "epsilon": 1.0,
        "ks": [],  # empty: 0 .. n-1
        "threshold": 0.1,
        "ratio": 2.0,
        "time_nodes": 5,
        "alpha": 0.0,
        "content_radii": [0.0625, 0.1],
    },
    "gmt": {
        "k": 1,
        "scales": [0.05, 0.1, 0.2, 0.4],
        "delta": 0.01,
    },
    "cover": {
        "k": 1,
        "R": 0.125,
        "r": 0.5,
        "rho": 0.05,
        "gamma": 0.1,
        "eta_prime": 0.05,
        "eta": 0.0,  # 0 selects rho / 200
        "oracle": "auto",
        "sample": "auto",
        "sample_points": 2000,
    },
    "output": {
        "dir": "out",
        "figures": True,
    },
}

CHOICES = {
    ("grid", "field"): ("hedgehog", "line-singular", "equivariant-disk", "random-smooth"),
    ("flow", "scheme"): ("projected-explicit", "ginzburg-landau"),
    ("flow", "boundary"): ("fixed-Dirichlet", "periodic"),
    ("densities", "cutoff"): ("none", "default"),
    ("densities", "quadrature"): ("auto", "grid", "richardson"),
    ("densities", "pairs"): ("adjacent", "dyadic"),
    ("cover", "oracle"): ("auto", "line", "hedgehog", "grid"),
    ("cover", "sample"): ("auto", "singular", "exact"),
}

# element prototypes for lists whose default is empty; "nested" marks coordinate lists
ELEMENTS = {("densities", "points"): "nested", ("grid", "center"): 0.0, ("strata", "ks"): 0}

# keys that do not change any artifact
NON_SEMANTIC = {("output", "dir")}


def _typecheck(path: str, default, value, proto=0.0):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok:
            value = float(value)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
        if ok:
            if default and not isinstance(default[0], list):
                proto = default[0]
            value = [_list_item(path, v, proto) for v in value]
    else:
        ok = False
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {type(value).__name__}")
    return value


def _list_item(path, v, proto):
    if proto == "nested":
        if not isinstance(v, list):
            raise ConfigError(f"{path}: expected a list of lists")
        return [_typecheck(path, 0.0, x) for x in v]
    return _typecheck(path, proto, v)


def normalize(raw: dict) -> dict:
    """Fill defaults, reject unknown keys, coerce numeric types."""
    out = copy.deepcopy(DEFAULTS)
    for key, val in raw.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        if isinstance(DEFAULTS[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"[{key}] must be a table")
            for sub, v in val.items():
                if sub not in DEFAULTS[key]:
                    raise ConfigError(f"unknown key {key}.{sub}")
                out[key][sub] = _typecheck(f"{key}.{sub}", DEFAULTS[key][sub], v, ELEMENTS.get((key, sub), 0.0))
        else:
            out[key] = _typecheck(key, DEFAULTS[key], val)
    validate(out)
    return out


def validate(cfg: dict):
    for (sec, key), allowed in CHOICES.items():
        if cfg[sec][key] not in allowed:
            raise ConfigError(f"{sec}.{key} = {cfg[sec][key]!r}; choose from {allowed}")
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    g = cfg["grid"]
    if not 1 <= g["n"] <= 4:
        raise ConfigError("grid.n must lie in [1, 4]")
    if g["nodes"] < 3:
        raise ConfigError("grid.nodes must be at least 3")
    if not g["hi"] > g["lo"]:
        raise ConfigError("grid.hi must exceed grid.lo")
    if len(g["center"]) not in (0, g["n"]):
        raise ConfigError("grid.center must be empty or have n entries")
    for p in cfg["densities"]["points"]:
        if len(p) != g["n"]:
            raise ConfigError("densities.points entries must have n coordinates")
    if any(not r > 0 for r in cfg["densities"]["radii"]):
        raise ConfigError("densities.radii must be positive")
    if any(not r > 0 for r in cfg["strata"]["content_radii"]):
        raise ConfigError("strata.content_radii must be positive")
    if any(not 0 <= k < g["n"] for k in cfg["strata"]["ks"]):
        raise ConfigError("strata.ks entries must lie in [0, n-1]")
    if cfg["densities"]["richardson_nodes"] % 4:
        raise ConfigError("densities.richardson_nodes must be a multiple of 4")


def parse_text(text: str) -> dict:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc
    return normalize(raw)


def load(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text)


def dumps(cfg: dict) -> str:
    return tomli_w.dumps(cfg)


def semantic(cfg: dict) -> dict:
    out = copy.deepcopy(cfg)
    for sec, key in NON_SEMANTIC:
        out[sec].pop(key, None)
    return out


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical JSON of the semantic fields (first 16 hex digits)."""
    blob = json.dumps(semantic(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
