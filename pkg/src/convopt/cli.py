"""``convopt <task> --config <path> [--out <dir>] [--seed <u64>]``.

Exit status: 0 when the task passes or converges, 1 on a failed check or
non-convergence, 2 on a usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .control import (
    OptOptions,
    critical_cone_curvature,
    optimize_projected_gradient,
    optimize_semismooth_newton,
)
from .errors import ConfigError, ConvoptError, UsageError
from .io import TASKS, config_digest, dumps_report, export_field, export_report, parse_config
from .mesh import interior_values
from .problem import ProblemSpec, problem_from_config
from .report import DiagnosticReport, _plain
from .solver import solve_state_newton
from .verification import (
    comparison_suite,
    garding_diagnostic,
    gradient_fd_check,
    hessian_fd_check,
    manufactured_convergence,
    quadratic_growth_check,
)

log = logging.getLogger("convopt")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
U64_MAX = 2**64 - 1
DEFAULT_CHECK_CONTROL = {"kind": "expression", "expr": "0.5*sin(pi*x1)*sin(pi*x2)"}


def thread_limit():
    """Context capping BLAS/OpenMP pools at CONVOPT_THREADS, if set."""
    raw = os.environ.get("CONVOPT_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"CONVOPT_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise UsageError(f"CONVOPT_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _versions() -> dict:
    import scipy
    import sympy

    return {
        "convopt": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "sympy": sympy.__version__,
        "python": platform.python_version(),
    }


def _control(p: ProblemSpec, spec: dict | None, default=None) -> np.ndarray:
    spec = spec or default or {"kind": "constant", "value": 0.0}
    if spec.get("kind", "constant") == "constant":
        return np.full(p.grid.n_dofs, float(spec.get("value", 0.0)))
    if "expr" not in spec:
        raise UsageError("expression control needs an 'expr' entry")
    return interior_values(p.grid, spec["expr"])


def _options(cfg: dict) -> OptOptions:
    s = cfg["solver"]
    return OptOptions(max_outer=s["max_outer"], tol_opt=s["tol_opt"], tau_active=s["tau_active"],
                      tol_state=s["tol_state"])


class _Run:
    """Artifact bookkeeping for a single task execution."""

    def __init__(self, cfg: dict, out: Path, seed: int):
        self.cfg = cfg
        self.out = out
        self.seed = seed
        self.digest = config_digest(cfg)
        self.artifacts: list[str] = []
        self.formats = cfg["output"]["formats"]

    def report(self, rep, name: str = "report.json") -> None:
        d = rep.to_dict() if hasattr(rep, "to_dict") else _plain(rep)
        d = dict(d, config_digest=self.digest)
        if hasattr(rep, "errors") and hasattr(rep, "h"):
            paths = export_report(rep, self.out / name)
            (self.out / name).write_text(dumps_report(d))
        else:
            paths = [self.out / name]
            paths[0].write_text(dumps_report(d))
        self.artifacts += [q.name for q in paths]

    def field(self, p: ProblemSpec, values, stem: str) -> None:
        for fmt in self.formats:
            path = self.out / f"{stem}.{fmt}"
            export_field(p.grid, values, path, fmt, name=stem, title=f"config={self.digest}")
            self.artifacts.append(path.name)


# tasks -----------------------------------------------------------------------

def _solve_state(run: _Run, p: ProblemSpec, params: dict) -> tuple[bool, dict]:
    u = _control(p, params.get("control"))
    sol = solve_state_newton(p, u, run.cfg["solver"]["tol_state"], run.cfg["solver"]["max_newton"])
    run.field(p, u, "control")
    run.field(p, sol.y, "state")
    rep = {
        "task": "solve-state",
        "converged": sol.report.converged,
        "residual": sol.residual,
        "newton_iterations": sol.newton_iterations,
        "globalization_used": sol.globalization_used,
        "residuals": sol.report.residuals,
        "damping": sol.report.damping,
    }
    run.report(rep)
    return True, {"residual": sol.residual}


def _optimize(run: _Run, p: ProblemSpec, params: dict) -> tuple[bool, dict]:
    u0 = _control(p, params.get("control"))
    method = params.get("method", "ssn")
    opt = optimize_semismooth_newton if method == "ssn" else optimize_projected_gradient
    res = opt(p, u0, _options(run.cfg))
    run.field(p, res.u, "control")
    run.field(p, res.y, "state")
    run.field(p, res.phi, "adjoint")
    run.report(res)
    return res.converged, {"status": res.status, "iterations": res.iterations}


def _check_gradient(run: _Run, p: ProblemSpec, params: dict) -> tuple[bool, dict]:
    u = _control(p, params.get("control"), DEFAULT_CHECK_CONTROL)
    rep = gradient_fd_check(p, u, params.get("directions", 5), run.seed, tol_state=run.cfg["solver"]["tol_state"])
    run.report(rep)
    return rep.passed, {"worst_best_mismatch": rep.values["worst_best_mismatch"]}


def _check_hessian(run: _Run, p: ProblemSpec, params: dict) -> tuple[bool, dict]:
    u = _control(p, params.get("control"), DEFAULT_CHECK_CONTROL)
    rep = hessian_fd_check(p, u, params.get("directions", 3), run.seed, tol_state=run.cfg["solver"]["tol_state"])
    run.report(rep)
    return rep.passed, {"worst_relative_error": rep.values["worst_relative_error"]}


def _comparison(run: _Run, p: ProblemSpec, params: dict) -> tuple[bool, dict]:
    rep = comparison_suite(p, params.get("n_pairs", 50), run.seed, params.get("amplitude", 5.0))
    run.report(rep)
    return rep.passed, {"max_violation": rep.values["max_violation"]}


def _convergence(run: _Run, p: ProblemSpec, params: dict) -> tuple[bool, dict]:
    kwargs = {"grids": params.get("grids", [8, 16, 32, 64]), "domain": p.domain}
    if "exact" in params:
        kwargs["exact"] = params["exact"]
    study = manufactured_convergence(p.a, p.b, p.f, **kwargs)
    run.report(study)
    ok = all(abs(o - 2.0) <= 0.4 for o in study.orders["L2"]) and all(abs(o - 1.0) <= 0.3 for o in study.orders["H1"])
    return ok, {"orders": study.orders}


def _coercivity(run: _Run, p: ProblemSpec, params: dict) -> tuple[bool, dict]:
    rep = garding_diagnostic(p.grid, p.a, p.b, params.get("reaction", 0.0))
    run.report(rep)
    return rep.passed, {"C": rep.values["C"], "gamma_h": rep.values["gamma_h"]}


def _growth(run: _Run, p: ProblemSpec, params: dict) -> tuple[bool, dict]:
    opts = _options(run.cfg)
    res = optimize_semismooth_newton(p, _control(p, params.get("control")), opts)
    if not res.converged:
        run.report(res, "optimize.json")
        return False, {"status": res.status}
    cone = critical_cone_curvature(p, res.u, params.get("n_samples", 50), run.seed, opts)
    kappa0 = cone.values["min_curvature"]
    growth = None
    if kappa0 > 0:
        growth = quadratic_growth_check(p, res.u, params.get("n_probes", 200), params.get("radius", 0.1), run.seed,
                                        kappa0=kappa0, opts=opts)
    passed = cone.passed and growth is not None and growth.passed
    rep = DiagnosticReport(
        "growth_check",
        bool(passed),
        {"optimize": res.to_dict(), "cone": cone.to_dict(), "growth": growth.to_dict() if growth else None},
        seed=run.seed,
        inputs_digest=p.digest(),
    )
    run.field(p, res.u, "control")
    run.report(rep)
    return passed, {"min_curvature": kappa0}


DISPATCH = {
    "solve-state": _solve_state,
    "optimize": _optimize,
    "check-gradient": _check_gradient,
    "check-hessian": _check_hessian,
    "comparison-suite": _comparison,
    "convergence-study": _convergence,
    "diagnose-coercivity": _coercivity,
    "growth-check": _growth,
}


def run(cfg: dict, task: str | None = None, out: str | Path | None = None, seed: int = 0) -> int:
    """Execute a validated config; writes manifest.json, timings.json and task artifacts under ``out``."""
    task = task or cfg["command"].get("task")
    if task not in DISPATCH:
        raise UsageError(f"unknown task {task!r}; choose from {', '.join(TASKS)}")
    if not 0 <= seed <= U64_MAX:
        raise UsageError("seed must be an unsigned 64-bit integer")
    out = Path(out if out is not None else cfg["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    r = _Run(cfg, out, seed)
    t0 = time.perf_counter()
    status, summary, error = EXIT_FAIL, {}, None
    try:
        with thread_limit():
            p = problem_from_config(cfg["problem"])
            passed, summary = DISPATCH[task](r, p, cfg["command"].get("params", {}))
        status = EXIT_OK if passed else EXIT_FAIL
    except UsageError as exc:
        status, error = EXIT_USAGE, f"{type(exc).__name__}: {exc}"
    except ConvoptError as exc:
        status, error = EXIT_FAIL, f"{type(exc).__name__}: {exc}"
        diag = getattr(exc, "diagnostics", None) or getattr(exc, "report", None)
        if diag is not None:
            summary = {"diagnostics": _plain(diag.__dict__ if hasattr(diag, "__dict__") else diag)}
    elapsed = time.perf_counter() - t0
    manifest = {
        "task": task,
        "seed": seed,
        "config": cfg,
        "config_digest": r.digest,
        "versions": _versions(),
        "exit_status": status,
        "summary": summary,
        "error": error,
        "artifacts": sorted(r.artifacts),
        "timings_file": "timings.json",
    }
    (out / "manifest.json").write_text(json.dumps(_plain(manifest), sort_keys=True, indent=2) + "\n")
    (out / "timings.json").write_text(json.dumps({"task": task, "wall_seconds": elapsed, "finished_at": time.time()},
                                                 sort_keys=True) + "\n")
    if error:
        log.error(error)
    return status


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from exc
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64 - 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="convopt", description=__doc__.splitlines()[0])
    ap.add_argument("task", choices=TASKS)
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--seed", type=_seed, default=0)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config.read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"convopt: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"convopt: {exc}", file=sys.stderr)
        return EXIT_USAGE
    declared = cfg["command"].get("task")
    if declared is not None and declared != args.task:
        print(f"convopt: config declares task {declared!r} but {args.task!r} was requested", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(cfg, args.task, args.out, args.seed)
    except UsageError as exc:
        print(f"convopt: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
