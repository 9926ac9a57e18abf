"""Run configuration parsing and artifact export (fields, reports, plot data)."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .errors import CoefficientError, ConfigError, SemanticError, UsageError
from .mesh import UniformGrid
from .problem import CATALOG, catalog_config, problem_from_config
from .report import _plain

TASKS = (
    "solve-state",
    "optimize",
    "check-gradient",
    "check-hessian",
    "comparison-suite",
    "convergence-study",
    "diagnose-coercivity",
    "growth-check",
)

_num = {"type": "number"}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_matrix = {"type": "array", "items": _pair, "minItems": 2, "maxItems": 2}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


_control = _obj(
    {
        "kind": {"enum": ["constant", "expression"]},
        "value": _num,
        "expr": {"type": "string"},
    }
)

SCHEMA = _obj(
    {
        "problem": _obj(
            {
                "catalog": {"enum": sorted(CATALOG)},
                "domain": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
                "grid": _obj({"nx": {"type": "integer"}, "ny": {"type": "integer"}}),
                "diffusion": _obj(
                    {
                        "kind": {"enum": ["identity", "constant", "anisotropic"]},
                        "scale": _num,
                        "matrix": _matrix,
                        "slope": _num,
                        "coupling": _num,
                        "ellipticity": _num,
                    }
                ),
                "convection": _obj(
                    {"kind": {"enum": ["zero", "constant", "linear"]}, "value": _pair, "matrix": _matrix, "offset": _pair}
                ),
                "nonlinearity": _obj(
                    {
                        "kind": {"enum": ["zero", "power", "exponential"]},
                        "r": _num,
                        "a0": {"type": ["number", "string"]},
                    }
                ),
                "objective": _obj(
                    {
                        "kind": {"enum": ["tracking"]},
                        "nu": _num,
                        "target": _obj(
                            {
                                "kind": {"enum": ["constant", "sines"]},
                                "value": _num,
                                "amplitude": _num,
                                "kx": {"type": "integer"},
                                "ky": {"type": "integer"},
                            }
                        ),
                    }
                ),
                "bounds": {"type": "array", "items": {"type": ["number", "null"]}, "minItems": 2, "maxItems": 2},
                "stabilization": _num,
            }
        ),
        "solver": _obj(
            {
                "tol_state": _num,
                "max_newton": {"type": "integer"},
                "tol_opt": _num,
                "max_outer": {"type": "integer"},
                "tau_active": _num,
            }
        ),
        "command": _obj(
            {
                "task": {"enum": list(TASKS)},
                "params": _obj(
                    {
                        "method": {"enum": ["ssn", "pg"]},
                        "control": _control,
                        "directions": {"type": "integer"},
                        "n_pairs": {"type": "integer"},
                        "amplitude": _num,
                        "radius": _num,
                        "n_probes": {"type": "integer"},
                        "n_samples": {"type": "integer"},
                        "grids": {"type": "array", "items": {"type": "integer"}},
                        "exact": {"type": "string"},
                        "reaction": _num,
                    }
                ),
            }
        ),
        "output": _obj(
            {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "vtk"]}},
            }
        ),
    }
)

DEFAULTS: dict[str, Any] = {
    "problem": {
        "domain": [0.0, 1.0, 0.0, 1.0],
        "grid": {"nx": 16, "ny": 16},
        "diffusion": {"kind": "identity"},
        "convection": {"kind": "zero"},
        "nonlinearity": {"kind": "zero"},
        "objective": {"kind": "tracking", "nu": 1e-2, "target": {"kind": "constant", "value": 0.0}},
        "bounds": [None, None],
        "stabilization": 0.0,
    },
    "solver": {"tol_state": 1e-10, "max_newton": 50, "tol_opt": 1e-10, "max_outer": 100, "tau_active": 1e-12},
    "command": {"params": {}},
    "output": {"directory": "convopt-out", "formats": ["csv"]},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def parse_config(text: str) -> dict:
    """Validate a JSON run config and return it with defaults filled in."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = _pointer(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            if extra:
                path = f"{path}/{extra[0]}"
                raise ConfigError(f"unknown key {extra[0]!r}", path)
        raise ConfigError(err.message, path)

    problem = raw.get("problem", {})
    base = DEFAULTS["problem"]
    if "catalog" in problem:
        nx = problem.get("grid", {}).get("nx", 16)
        base = _merge(base, catalog_config(problem["catalog"], nx=nx))
    cfg = _merge(DEFAULTS, raw)
    cfg["problem"] = _merge(base, problem)
    _semantic_checks(cfg)
    return cfg


def _semantic_checks(cfg: dict) -> None:
    p = cfg["problem"]
    if not p["objective"]["nu"] > 0:
        raise SemanticError("Tikhonov weight must satisfy nu > 0", "/problem/objective/nu")
    lo, hi = p["bounds"]
    if lo is not None and hi is not None and not lo < hi:
        raise SemanticError("bounds must satisfy alpha < beta", "/problem/bounds")
    x0, x1, y0, y1 = p["domain"]
    if not (x0 < x1 and y0 < y1):
        raise SemanticError("domain must be a nondegenerate rectangle [x_min, x_max, y_min, y_max]", "/problem/domain")
    for axis in ("nx", "ny"):
        if p["grid"].get(axis, 2) < 2:
            raise SemanticError(f"{axis} must be >= 2", f"/problem/grid/{axis}")
    nl = p["nonlinearity"]
    if nl["kind"] == "power" and nl.get("r", 2.0) < 1:
        raise SemanticError("power exponent must satisfy r >= 1", "/problem/nonlinearity/r")
    if p["stabilization"] < 0:
        raise SemanticError("stabilization must be >= 0", "/problem/stabilization")
    s = cfg["solver"]
    for key in ("tol_state", "tol_opt"):
        if not s[key] > 0:
            raise SemanticError(f"{key} must be positive", f"/solver/{key}")
    if s["tau_active"] < 0:
        raise SemanticError("tau_active must be >= 0", "/solver/tau_active")
    for key in ("max_newton", "max_outer"):
        if s[key] < 1:
            raise SemanticError(f"{key} must be >= 1", f"/solver/{key}")
    try:
        problem_from_config(p)
    except (CoefficientError, UsageError) as exc:
        raise SemanticError(str(exc), "/problem") from exc


def config_digest(cfg: dict) -> str:
    blob = json.dumps(_plain(cfg), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# export ----------------------------------------------------------------------

def export_field(grid: UniformGrid, values, path, fmt: str = "csv", name: str = "value", title: str = "") -> Path:
    """Write a nodal field (interior or full length) as CSV or legacy VTK."""
    path = Path(path)
    full = grid.to_full(values)
    X, Y = grid.node_coords
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "value"])
            for x, y, v in zip(X, Y, full):
                w.writerow([f"{x:.17g}", f"{y:.17g}", f"{v:.17g}"])
    elif fmt in ("vtk", "vtk-legacy"):
        d = grid.domain
        lines = [
            "# vtk DataFile Version 3.0",
            f"convopt field {name} {title}".rstrip(),
            "ASCII",
            "DATASET STRUCTURED_POINTS",
            f"DIMENSIONS {grid.nx + 1} {grid.ny + 1} 1",
            f"ORIGIN {d.x_min:.17g} {d.y_min:.17g} 0",
            f"SPACING {grid.hx:.17g} {grid.hy:.17g} 1",
            f"POINT_DATA {grid.n_nodes}",
            f"SCALARS {name} double 1",
            "LOOKUP_TABLE default",
        ]
        lines += [f"{v:.17g}" for v in full]
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown field format {fmt!r}")
    return path


def read_field_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2]


def _jsonable(report) -> dict:
    if hasattr(report, "to_dict"):
        return report.to_dict()
    return _plain(report)


def dumps_report(report) -> str:
    return json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"


def export_report(report, path) -> list[Path]:
    """Write a report as JSON; convergence studies also get one (h, error) file per norm."""
    path = Path(path)
    path.write_text(dumps_report(report))
    written = [path]
    errors = getattr(report, "errors", None)
    if isinstance(errors, dict) and hasattr(report, "h"):
        for norm, errs in errors.items():
            plot = path.with_name(f"{path.stem}_{norm}.dat")
            plot.write_text("".join(f"{h:.17g} {e:.17g}\n" for h, e in zip(report.h, errs)))
            written.append(plot)
    return written


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


__all__ = [
    "TASKS",
    "SCHEMA",
    "DEFAULTS",
    "parse_config",
    "config_digest",
    "export_field",
    "read_field_csv",
    "export_report",
    "dumps_report",
    "load_report",
]
