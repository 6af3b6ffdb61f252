"""JSON model artifacts and run manifests."""

from __future__ import annotations

import json
import math
import platform
from pathlib import Path

import numpy as np

from .data import ModelState
from .propensity import PropensityFit

SCHEMA_VERSION = 1


def jsonable(obj):
    """Recursively convert numpy scalars/arrays; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_json(obj, path=None) -> str:
    text = json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def model_to_dict(state: ModelState, prop: PropensityFit, trace=None, config=None, method="ls", extra=None) -> dict:
    d = {
        "schema": SCHEMA_VERSION,
        "method": method,
        "n": int(state.L.shape[0]),
        "m": int(state.F.shape[0]),
        "rank": int(state.r),
        "beta": state.beta,
        "L": state.L,
        "F": state.F,
        "propensity": prop.to_dict(),
        "config": config or {},
    }
    if trace is not None:
        d["trace"] = trace.to_dict()
    if extra:
        d.update(extra)
    return d


def save_model(path, state, prop, trace=None, config=None, method="ls", extra=None):
    return dump_json(model_to_dict(state, prop, trace, config, method, extra), path)


def load_model(path):
    with open(path) as fh:
        d = json.load(fh)
    n, m, r = d["n"], d["m"], d["rank"]
    beta = np.asarray(d["beta"], dtype=float).reshape(m, -1)
    L = np.asarray(d["L"], dtype=float).reshape(n, r)
    F = np.asarray(d["F"], dtype=float).reshape(m, r)
    p = dict(d["propensity"])
    if p.get("gamma0") is None:
        p["gamma0"] = float("inf")
    return ModelState(beta, L, F), PropensityFit.from_dict(p), d


def versions() -> dict:
    import scipy

    from . import __version__

    return {"covmc": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def write_manifest(out_path, command: str, args: dict, seed=None):
    """Write ``<out>.manifest.json`` next to an output file."""
    out_path = Path(out_path)
    man = {"command": command, "args": args, "seed": seed, "versions": versions()}
    target = out_path.with_name(out_path.name + ".manifest.json") if out_path.suffix else out_path / "manifest.json"
    dump_json(man, target)
    return target
