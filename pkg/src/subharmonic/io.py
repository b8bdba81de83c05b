"""Run configuration, bit-exact solution files and CSV export.

Reals are written as C99 hex-float strings, so a write/read cycle returns
identical bits. Complex numbers become ``[re, im]`` pairs and arrays carry
their dtype and shape. Every file embeds the run configuration and the
library version.
"""

from __future__ import annotations

import copy
import csv
import json
import math
from pathlib import Path

import numpy as np
import yaml

from .spo import NearDiagonalFloquet, PeriodicOrbitSolution
from .systems import ResonanceLabel

__all__ = [
    "ConfigError",
    "FileFormatError",
    "DEFAULT_CONFIG",
    "load_config",
    "apply_overrides",
    "validate_config",
    "encode",
    "decode",
    "solution_to_dict",
    "solution_from_dict",
    "write_solution",
    "read_solution",
    "parameterization_to_dict",
    "parameterization_from_dict",
    "write_parameterization",
    "read_parameterization",
    "write_curves_csv",
    "library_version",
]

FORMAT = "subharmonic-solution/1"
PARAM_FORMAT = "subharmonic-separatrix/1"


class ConfigError(ValueError):
    """A configuration value is missing or malformed; ``path`` names the field."""

    def __init__(self, path, msg):
        super().__init__(f"{path}: {msg}")
        self.path = path


class FileFormatError(ValueError):
    pass


def library_version():
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:  # not installed
        return "0.1.0"


# ----------------------------------------------------------------- config

DEFAULT_CONFIG = {
    "system": {"name": "forced_pendulum", "params": {}},
    "resonance": "1/3",
    "seed": {"method": "pendulum", "sign": 1.0, "theta0": 0.0, "point": None,
             "candidate": 0, "x_bracket": None, "py_guess": None, "half_period_guess": None,
             "tol": 1e-8},
    "continuation": {"eps_final": 0.01, "n_steps": None, "step": 1e-3, "tol": 1e-7,
                     "max_iter": 20, "max_halvings": 4},
    "integrator": {"abs_tol": 1e-12, "rel_tol": 1e-12, "max_steps": 100000},
    "separatrix": {"branch": "both", "d_max": 20, "alpha": "auto", "E_tol": 1e-6,
                   "n_grid": 64, "n_per_k": 200},
    "output": {"dir": "out"},
}

_SYSTEMS = ("forced_pendulum", "jupiter_europa_ganymede", "ccr4bp")
_SEED_METHODS = ("point", "pendulum", "symmetric")
_BRANCHES = ("both", "weak_stable", "weak_unstable")


def _coerce(node):
    """YAML 1.1 reads ``1e-15`` as a string; turn such strings into floats."""
    if isinstance(node, dict):
        return {k: _coerce(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_coerce(v) for v in node]
    if isinstance(node, str):
        try:
            return float(node)
        except ValueError:
            return node
    return node


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(where, "unknown field")
        if isinstance(base[key], dict) and key != "params":
            if not isinstance(val, dict):
                raise ConfigError(where, "expected a mapping")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def apply_overrides(cfg, assignments):
    """Apply ``a.b.c=value`` strings; values are parsed as YAML scalars."""
    cfg = copy.deepcopy(cfg)
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key.path=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = cfg
        for i, part in enumerate(parts[:-1]):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(".".join(parts[: i + 1]), "unknown field")
            node = node[part]
        leaf = parts[-1]
        inside_params = len(parts) >= 2 and parts[-2] == "params"
        if not isinstance(node, dict) or (leaf not in node and not inside_params):
            raise ConfigError(key, "unknown field")
        try:
            node[leaf] = _coerce(yaml.safe_load(raw))
        except yaml.YAMLError as exc:
            raise ConfigError(key, f"cannot parse value {raw!r}") from exc
    return cfg


def _num(cfg, path, *, positive=False, integer=False, allow_none=False):
    node = cfg
    for p in path.split("."):
        node = node[p]
    if node is None and allow_none:
        return
    ok = isinstance(node, (int, float)) and not isinstance(node, bool) and math.isfinite(node)
    if ok and integer:
        ok = float(node).is_integer()
    if not ok:
        raise ConfigError(path, f"expected {'an integer' if integer else 'a finite number'}, "
                                f"got {node!r}")
    if positive and node <= 0:
        raise ConfigError(path, f"must be positive, got {node!r}")


def validate_config(cfg):
    """Check every statically checkable field; raise :class:`ConfigError`."""
    name = cfg["system"]["name"]
    if name not in _SYSTEMS:
        raise ConfigError("system.name", f"must be one of {_SYSTEMS}, got {name!r}")
    if not isinstance(cfg["system"]["params"], dict):
        raise ConfigError("system.params", "expected a mapping")
    try:
        ResonanceLabel.parse(cfg["resonance"])
    except (ValueError, TypeError) as exc:
        raise ConfigError("resonance", f"expected 'p/q' in lowest terms with p < q ({exc})") from exc
    seed = cfg["seed"]
    if seed["method"] not in _SEED_METHODS:
        raise ConfigError("seed.method", f"must be one of {_SEED_METHODS}")
    _num(cfg, "seed.theta0")
    _num(cfg, "seed.tol", positive=True)
    if seed["method"] == "point":
        pt = seed["point"]
        if not (isinstance(pt, list) and len(pt) == 4
                and all(isinstance(v, (int, float)) for v in pt)):
            raise ConfigError("seed.point", "expected four numbers")
    if seed["method"] == "pendulum":
        if name != "forced_pendulum":
            raise ConfigError("seed.method", "the pendulum seed needs system forced_pendulum")
        if seed["sign"] not in (1, -1, 1.0, -1.0):
            raise ConfigError("seed.sign", "must be +1 or -1")
    if seed["method"] == "symmetric":
        if name == "forced_pendulum":
            raise ConfigError("seed.method", "symmetric seeds need a three-body system")
        br = seed["x_bracket"]
        if not (isinstance(br, list) and len(br) == 2 and br[0] < br[1]):
            raise ConfigError("seed.x_bracket", "expected [lo, hi] with lo < hi")
        _num(cfg, "seed.py_guess")
        _num(cfg, "seed.half_period_guess", positive=True)
        if seed["candidate"] not in (0, 1, 2, 3):
            raise ConfigError("seed.candidate", "must be 0, 1, 2 or 3")
    _num(cfg, "continuation.eps_final")
    if cfg["continuation"]["eps_final"] < 0:
        raise ConfigError("continuation.eps_final", "must be non-negative")
    _num(cfg, "continuation.step", positive=True)
    _num(cfg, "continuation.n_steps", positive=True, integer=True, allow_none=True)
    _num(cfg, "continuation.tol", positive=True)
    _num(cfg, "continuation.max_iter", positive=True, integer=True)
    _num(cfg, "continuation.max_halvings", integer=True)
    for key in ("abs_tol", "rel_tol"):
        _num(cfg, f"integrator.{key}", positive=True)
    _num(cfg, "integrator.max_steps", positive=True, integer=True)
    sep = cfg["separatrix"]
    if sep["branch"] not in _BRANCHES:
        raise ConfigError("separatrix.branch", f"must be one of {_BRANCHES}")
    _num(cfg, "separatrix.d_max", positive=True, integer=True)
    if sep["alpha"] != "auto":
        _num(cfg, "separatrix.alpha")
        if sep["alpha"] == 0:
            raise ConfigError("separatrix.alpha", "must be nonzero or 'auto'")
    _num(cfg, "separatrix.E_tol", positive=True)
    _num(cfg, "separatrix.n_grid", positive=True, integer=True)
    _num(cfg, "separatrix.n_per_k", positive=True, integer=True)
    return cfg


def load_config(path=None, overrides=None):
    """Defaults, then the YAML file at ``path``, then ``key=value`` overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(str(path), f"cannot read config: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(str(path), f"invalid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(str(path), "top level must be a mapping")
        cfg = _merge(cfg, _coerce(data))
    cfg = apply_overrides(cfg, overrides)
    return validate_config(cfg)


# ---------------------------------------------------------------- codec

def _hex(x):
    return float(x).hex()


def _unhex(s):
    if isinstance(s, str):
        return float.fromhex(s)
    if isinstance(s, (int, float)):
        return float(s)
    raise FileFormatError(f"expected a hex float, got {s!r}")


def encode(obj):
    """JSON-ready structure with every real as a hex string."""
    if isinstance(obj, np.ndarray):
        if obj.dtype.kind == "c":
            flat = [[_hex(z.real), _hex(z.imag)] for z in obj.ravel()]
            return {"__array__": "complex", "shape": list(obj.shape), "data": flat}
        if obj.dtype.kind in "fiu":
            return {"__array__": "real", "shape": list(obj.shape),
                    "data": [_hex(v) for v in obj.astype(float).ravel()]}
        raise TypeError(f"cannot encode array of dtype {obj.dtype}")
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (complex, np.complexfloating)):
        return {"__complex__": [_hex(obj.real), _hex(obj.imag)]}
    if isinstance(obj, (float, np.floating)):
        return {"__float__": _hex(obj)}
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode(v) for v in obj]
    raise TypeError(f"cannot encode {type(obj).__name__}")


def decode(obj):
    if isinstance(obj, list):
        return [decode(v) for v in obj]
    if not isinstance(obj, dict):
        return obj
    if "__float__" in obj:
        return _unhex(obj["__float__"])
    if "__complex__" in obj:
        re, im = obj["__complex__"]
        return complex(_unhex(re), _unhex(im))
    if "__array__" in obj:
        shape = tuple(obj["shape"])
        if obj["__array__"] == "complex":
            vals = [complex(_unhex(a), _unhex(b)) for a, b in obj["data"]]
            return np.array(vals, dtype=complex).reshape(shape)
        return np.array([_unhex(v) for v in obj["data"]], dtype=float).reshape(shape)
    return {k: decode(v) for k, v in obj.items()}


# ------------------------------------------------------------ solutions

def solution_to_dict(sol):
    lam = sol.lam
    return {
        "eps": float(sol.eps),
        "label": str(sol.label),
        "mode": sol.mode,
        "tol": float(sol.tol),
        "X": np.asarray(sol.X, dtype=float),
        "P": np.asarray(sol.P, dtype=complex),
        "lam1": complex(lam.lam1),
        "lam2": complex(lam.lam2),
        "T": complex(lam.T),
        "lam_s": np.asarray(lam.lam_s, dtype=complex),
        "lam_u": np.asarray(lam.lam_u, dtype=complex),
        "norm_E": float(sol.norm_E),
        "norm_E_red": float(sol.norm_E_red),
        "cond_P": float(sol.cond_P),
        "history": [[float(a), float(b)] for a, b in sol.history],
    }


def solution_from_dict(d):
    try:
        lam = NearDiagonalFloquet(d["lam1"], d["lam2"], d["T"], d["lam_s"], d["lam_u"])
        return PeriodicOrbitSolution(
            eps=d["eps"], label=ResonanceLabel.parse(d["label"]), X=d["X"], P=d["P"], lam=lam,
            mode=d["mode"], tol=d["tol"], norm_E=d["norm_E"], norm_E_red=d["norm_E_red"],
            history=[tuple(h) for h in d["history"]], cond_P=d["cond_P"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"malformed solution record: {exc}") from exc


def _write(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(encode(payload), indent=1))
    return path


def _read(path, fmt):
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("format") != fmt:
        raise FileFormatError(f"{path} is not a {fmt} file")
    return decode(raw)


def write_solution(path, sol, config, *, theta0=0.0, extra=None):
    payload = {"format": FORMAT, "version": library_version(), "config": config,
               "theta0": float(theta0), "solution": solution_to_dict(sol)}
    if extra:
        payload["extra"] = extra
    return _write(path, payload)


def read_solution(path):
    """Return ``(solution, meta)``; ``meta`` holds config, version and theta0."""
    data = _read(path, FORMAT)
    sol = solution_from_dict(data["solution"])
    meta = {k: v for k, v in data.items() if k != "solution"}
    return sol, meta


# ---------------------------------------------------- parameterizations

def parameterization_to_dict(p):
    return {"label": str(p.label), "branch": p.branch, "lam": float(p.lam), "W": p.W,
            "alpha": float(p.alpha), "column": int(p.column), "eps": float(p.eps),
            "E_tol": None if p.E_tol is None else float(p.E_tol),
            "D": None if p.D is None else np.asarray(p.D, dtype=float), "norm": p.norm}


def parameterization_from_dict(d):
    from .separatrix import SeparatrixParameterization
    return SeparatrixParameterization(
        ResonanceLabel.parse(d["label"]), d["branch"], d["lam"], d["W"], d["alpha"],
        d["column"], eps=d["eps"], E_tol=d["E_tol"], D=d["D"], norm=d["norm"])


def write_parameterization(path, param, config, *, theta0=0.0):
    return _write(path, {"format": PARAM_FORMAT, "version": library_version(), "config": config,
                         "theta0": float(theta0),
                         "parameterization": parameterization_to_dict(param)})


def read_parameterization(path):
    data = _read(path, PARAM_FORMAT)
    return parameterization_from_dict(data["parameterization"]), \
        {k: v for k, v in data.items() if k != "parameterization"}


def write_curves_csv(path, rows):
    """CSV with header ``k,s,x,y,px,py``; floats in shortest round-trip form."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "s", "x", "y", "px", "py"])
        for r in rows:
            w.writerow([int(r[0])] + [repr(float(v)) for v in r[1:]])
    return path
