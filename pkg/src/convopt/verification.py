"""Executable checks: derivative consistency, coercivity, comparison, stability, growth."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import sympy

from .control import OptOptions, critical_cone_curvature, evaluate, project_box
from .errors import CapabilityError, ConvoptError, UsageError
from .mesh import (
    X1,
    X2,
    DiffusionTensor,
    RectDomain,
    UniformGrid,
    VectorCoefficient,
    assemble_convection,
    assemble_diffusion,
    assemble_load,
    assemble_reaction,
    build_grid,
    coefficient,
    mass_matrix,
)
from .nonlinearity import NonlinearitySpec, ObjectiveSpec
from .problem import ProblemSpec
from .report import DiagnosticReport, _plain, digest
from .solver import comparison_check, solve_state, solve_state_newton

TS_GRADIENT = (1e-3, 1e-4, 1e-5)


def _directions(p: ProblemSpec, directions, rng) -> list[np.ndarray]:
    if isinstance(directions, int):
        out = []
        for _ in range(directions):
            v = rng.standard_normal(p.grid.n_dofs)
            out.append(v / math.sqrt(v @ (p.control_mass @ v)))
        return out
    return [np.asarray(v, dtype=float) for v in directions]


def gradient_fd_check(
    p: ProblemSpec,
    u,
    directions: int | Sequence = 5,
    seed: int = 0,
    ts: Sequence[float] = TS_GRADIENT,
    tol: float = 1e-8,
    tol_state: float = 1e-10,
) -> DiagnosticReport:
    """Compare <g, v>_{M_L} with central differences of J along each direction.

    Mismatches are relative to max(1, |J(u)|). Slopes are only measured between
    step sizes whose mismatches exceed 10x the state tolerance.
    """
    rng = np.random.default_rng(seed)
    u = np.asarray(u, dtype=float)
    pt = evaluate(p, u, tol_state)
    scale = max(1.0, abs(pt.J))
    floor = 10 * tol_state
    rows = []
    for v in _directions(p, directions, rng):
        dd = float(pt.grad @ (p.control_mass @ v))
        if not np.any(v):
            rows.append({"directional": dd, "mismatch": [0.0] * len(ts), "best": 0.0, "slopes": []})
            continue
        mism = []
        for t in ts:
            fd = (evaluate(p, u + t * v, tol_state).J - evaluate(p, u - t * v, tol_state).J) / (2 * t)
            mism.append(abs(dd - fd) / scale)
        slopes = [
            math.log(mism[i] / mism[i + 1]) / math.log(ts[i] / ts[i + 1])
            for i in range(len(ts) - 1)
            if mism[i] > floor and mism[i + 1] > floor
        ]
        rows.append({"directional": dd, "mismatch": mism, "best": min(mism), "slopes": slopes})
    worst = max(r["best"] for r in rows)
    by_t = [max(r["mismatch"][i] for r in rows) for i in range(len(ts))]
    slopes_ok = all(1.7 <= s <= 2.3 for r in rows for s in r["slopes"])
    return DiagnosticReport(
        "gradient_fd",
        bool(worst <= tol and slopes_ok),
        {"J": pt.J, "t": list(ts), "worst_best_mismatch": worst, "worst_mismatch_by_t": by_t, "slopes_ok": slopes_ok, "directions": rows},
        tolerance=tol,
        seed=seed,
        inputs_digest=p.digest(),
    )


def hessian_fd_check(
    p: ProblemSpec,
    u,
    directions: int | Sequence = 3,
    seed: int = 0,
    t: float = 1e-3,
    tol: float = 1e-4,
    sym_tol: float = 1e-9,
    tol_state: float = 1e-10,
) -> DiagnosticReport:
    """Quadratic form J''(u)(v, v) against second differences of J, plus symmetry."""
    if not p.f.is_c2:
        raise CapabilityError("Hessian check needs a C2 nonlinearity")
    rng = np.random.default_rng(seed)
    u = np.asarray(u, dtype=float)
    pt = evaluate(p, u, tol_state)
    dirs = _directions(p, directions, rng)
    rows = []
    for v in dirs:
        hv = pt.hessian_form(v, v)
        if not np.any(v):
            rows.append({"quadratic_form": hv, "second_difference": 0.0, "relative_error": 0.0})
            continue
        sd = (evaluate(p, u + t * v, tol_state).J - 2 * pt.J + evaluate(p, u - t * v, tol_state).J) / t**2
        rows.append({"quadratic_form": hv, "second_difference": sd, "relative_error": abs(hv - sd) / abs(hv)})
    asym = 0.0
    for i in range(len(dirs)):
        for j in range(i + 1, len(dirs)):
            asym = max(asym, abs(pt.hessian_form(dirs[i], dirs[j]) - pt.hessian_form(dirs[j], dirs[i])))
    worst = max(r["relative_error"] for r in rows)
    return DiagnosticReport(
        "hessian_fd",
        bool(worst <= tol and asym <= sym_tol),
        {"t": t, "worst_relative_error": worst, "max_asymmetry": asym, "directions": rows},
        tolerance=tol,
        seed=seed,
        inputs_digest=p.digest(),
    )


# coercivity ------------------------------------------------------------------

def smallest_generalized_eigenvalue(A, B) -> float:
    """min z.Az / z.Bz for symmetric A and SPD B."""
    n = A.shape[0]
    if n <= 3000:
        A = A.toarray() if sp.issparse(A) else np.asarray(A)
        B = B.toarray() if sp.issparse(B) else np.asarray(B)
        L = np.linalg.cholesky(B)
        Li = np.linalg.inv(L)
        C = Li @ A @ Li.T
        return float(np.linalg.eigvalsh(0.5 * (C + C.T))[0])
    vals = spla.eigsh(sp.csc_matrix(A), k=1, M=sp.csc_matrix(B), which="SA", tol=1e-12)[0]
    return float(vals[0])


def garding_diagnostic(
    grid: UniformGrid,
    a: DiffusionTensor,
    b: VectorCoefficient,
    c=0.0,
    ellipticity: float | None = None,
) -> DiagnosticReport:
    """Smallest C >= 0 with z.sym(K)z + C z.Mz >= (Lambda/4) |z|_{H1}^2 on the grid."""
    try:
        K = assemble_diffusion(grid, a) + assemble_convection(grid, b) + assemble_reaction(grid, c)
        S = assemble_diffusion(grid, DiffusionTensor.identity())
        M = mass_matrix(grid)
        if ellipticity is None:
            q = grid.quadrature(2)
            ellipticity = a.ellipticity if a.ellipticity is not None else float(a.min_eigenvalue(q.qx, q.qy).min())
        symK = 0.5 * (K + K.T)
        shifted = smallest_generalized_eigenvalue(symK - 0.25 * ellipticity * S, M)
        C = max(0.0, -shifted)
        gamma = smallest_generalized_eigenvalue(symK + C * M, S)
    except (np.linalg.LinAlgError, spla.ArpackError) as exc:
        raise ConvoptError(f"eigen-solve failed: {exc}") from exc
    return DiagnosticReport(
        "garding",
        bool(gamma >= 0.25 * ellipticity * (1 - 1e-10)),
        {"C": C, "gamma_h": gamma, "ellipticity": ellipticity, "shifted_min_eigenvalue": shifted},
        inputs_digest=digest({"nx": grid.nx, "ny": grid.ny, "domain": asdict(grid.domain)}),
    )


# comparison / stability ------------------------------------------------------

def comparison_suite(
    p: ProblemSpec,
    n_pairs: int = 50,
    seed: int = 0,
    amplitude: float = 5.0,
    gap: float = 1.0,
    tol: float = 1e-9,
) -> DiagnosticReport:
    """Run comparison_check on seeded ordered pairs u1 <= u2 = u1 + gap*|noise|."""
    rng = np.random.default_rng(seed)
    n = p.grid.n_dofs
    worst, worst_pair = -math.inf, -1
    violations = []
    for k in range(n_pairs):
        u1 = amplitude * rng.standard_normal(n)
        u2 = u1 + gap * amplitude * np.abs(rng.standard_normal(n))
        v = comparison_check(p, u1, u2, tol).values["max_violation"]
        violations.append(v)
        if v > worst:
            worst, worst_pair = v, k
    return DiagnosticReport(
        "comparison_suite",
        bool(worst <= tol),
        {"max_violation": worst, "worst_pair": worst_pair, "n_pairs": n_pairs, "violations": violations},
        tolerance=tol,
        seed=seed,
        inputs_digest=p.digest(),
    )


def lipschitz_stability_check(
    p: ProblemSpec,
    n_pairs: int = 20,
    radius: float = 1.0,
    seed: int = 0,
    ratio_limit: float = 50.0,
    pairs: Sequence | None = None,
) -> DiagnosticReport:
    """Ratios (|dy|_inf + |dy|_H1) / |du|_L2 over control pairs in an L2 ball.

    ``pairs`` overrides the seeded sampling; identical pairs are skipped.
    """
    rng = np.random.default_rng(seed)
    n = p.grid.n_dofs
    S = p.laplacian
    Ml = p.control_mass

    def sample():
        v = rng.standard_normal(n)
        return radius * rng.uniform() * v / math.sqrt(v @ (Ml @ v))

    if pairs is None:
        pairs = [(sample(), sample()) for _ in range(n_pairs)]
    ratios, skipped = [], 0
    for u, w in pairs:
        u, w = np.asarray(u, dtype=float), np.asarray(w, dtype=float)
        du = u - w
        nu = math.sqrt(du @ (Ml @ du))
        if nu == 0:
            skipped += 1
            continue
        dy = solve_state(p, u) - solve_state(p, w)
        ratios.append((np.max(np.abs(dy)) + math.sqrt(max(dy @ (S @ dy), 0.0))) / nu)
    ratios = np.array(ratios)
    if ratios.size:
        values = {"max_ratio": float(ratios.max()), "median_ratio": float(np.median(ratios)),
                  "spread": float(ratios.max() / np.median(ratios))}
    else:
        values = {"max_ratio": math.nan, "median_ratio": math.nan, "spread": math.nan}
    values.update(ratios=ratios.tolist(), radius=radius, skipped_identical=skipped)
    return DiagnosticReport(
        "lipschitz_stability",
        bool(ratios.size and values["spread"] <= ratio_limit),
        values,
        tolerance=ratio_limit,
        seed=seed,
        inputs_digest=p.digest(),
    )


# manufactured solutions ------------------------------------------------------

@dataclass
class ConvergenceStudy:
    nx: list[int]
    h: list[float]
    errors: dict[str, list[float]] = field(default_factory=dict)
    orders: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _expr(c):
    e = getattr(c, "expr", None)
    if e is None:
        raise UsageError("manufactured solutions need coefficients given as expressions")
    return e


def manufactured_source(a: DiffusionTensor, b: VectorCoefficient, f: NonlinearitySpec, exact) -> sympy.Expr:
    """-div(a grad y*) + b . grad y* + f(x, y*) for a symbolic y*."""
    y = sympy.sympify(exact, locals={"x1": X1, "x2": X2})
    a11, a12, a21, a22 = (_expr(c) for c in a.entries)
    gx, gy = sympy.diff(y, X1), sympy.diff(y, X2)
    # A y = -sum_j d_j (sum_i a_ij d_i y)
    flux1 = a11 * gx + a21 * gy
    flux2 = a12 * gx + a22 * gy
    src = -(sympy.diff(flux1, X1) + sympy.diff(flux2, X2))
    b1, b2 = (_expr(c) for c in b.components)
    src += b1 * gx + b2 * gy
    if f.kind == "power":
        src += _expr(f._a0) * sympy.Abs(y) ** sympy.nsimplify(f.r) * y
    elif f.kind == "exponential":
        src += _expr(f._a0) * sympy.exp(y)
    return src


def discretization_errors(grid: UniformGrid, y_h, exact) -> dict[str, float]:
    """L2, H1-seminorm (4x4 Gauss) and nodal max errors against a symbolic y*."""
    y = sympy.sympify(exact, locals={"x1": X1, "x2": X2})
    ex, dx, dy = (coefficient(e) for e in (y, sympy.diff(y, X1), sympy.diff(y, X2)))
    q = grid.quadrature(4)
    vals = grid.to_quad(y_h, 4)
    gx, gy = grid.grad_to_quad(y_h, 4)
    l2 = math.sqrt(np.sum(q.weight * (vals - ex(q.qx, q.qy)) ** 2))
    h1 = math.sqrt(np.sum(q.weight * ((gx - dx(q.qx, q.qy)) ** 2 + (gy - dy(q.qx, q.qy)) ** 2)))
    full = grid.to_full(y_h)
    mx = float(np.max(np.abs(full - ex(*grid.node_coords))))
    return {"L2": l2, "H1": h1, "max": mx}


def manufactured_convergence(
    a: DiffusionTensor,
    b: VectorCoefficient,
    f: NonlinearitySpec,
    exact="sin(pi*x1)*sin(pi*x2)",
    grids: Sequence[int] = (8, 16, 32, 64),
    domain: RectDomain | None = None,
    tol_state: float = 1e-12,
) -> ConvergenceStudy:
    grids = [int(n) for n in grids]
    if len(grids) < 2 or any(n2 <= n1 for n1, n2 in zip(grids, grids[1:])):
        raise UsageError(f"grid sequence {grids} is not strictly refining")
    domain = domain or RectDomain(0.0, 1.0, 0.0, 1.0)
    probe = build_grid(domain, grids[-1], grids[-1])
    X, Y = probe.node_coords
    bnd = probe.dofmap.node_to_dof < 0
    if np.max(np.abs(coefficient(exact)(X[bnd], Y[bnd]))) > 1e-12:
        raise UsageError("manufactured solution must vanish on the boundary")
    source = manufactured_source(a, b, f, exact)
    study = ConvergenceStudy(nx=grids, h=[])
    errs: dict[str, list[float]] = {"L2": [], "H1": [], "max": []}
    for n in grids:
        p = ProblemSpec(domain, n, n, a, b, f, ObjectiveSpec())
        load = assemble_load(p.grid, source)
        y_h = solve_state_newton(p, load=load, tol_state=tol_state).y
        study.h.append(p.grid.h)
        for k, v in discretization_errors(p.grid, y_h, exact).items():
            errs[k].append(v)
    study.errors = errs
    study.orders = {
        k: [
            math.log(e[i] / e[i + 1]) / math.log(study.h[i] / study.h[i + 1]) if e[i] > 0 and e[i + 1] > 0 else math.nan
            for i in range(len(e) - 1)
        ]
        for k, e in errs.items()
    }
    return study


# second-order growth ---------------------------------------------------------

def quadratic_growth_check(
    p: ProblemSpec,
    ubar,
    n_probes: int = 200,
    radius: float = 0.1,
    seed: int = 0,
    kappa0: float | None = None,
    opts: OptOptions | None = None,
    slack: float = 1e-12,
) -> DiagnosticReport:
    """J(u) - J(ubar) >= (kappa/2)|u - ubar|^2 on feasible probes, kappa = half the cone curvature."""
    opts = opts or OptOptions()
    ubar = np.asarray(ubar, dtype=float)
    if kappa0 is None:
        kappa0 = critical_cone_curvature(p, ubar, seed=seed, opts=opts).values["min_curvature"]
    else:
        pt = evaluate(p, ubar, opts.tol_state)
        if pt.residual() > max(opts.tol_opt, 1e-8):
            raise UsageError("control is not stationary")
    if not kappa0 > 0:
        raise UsageError(f"cone curvature {kappa0} is not positive")
    kappa = 0.5 * kappa0 if math.isfinite(kappa0) else p.nu
    rng = np.random.default_rng(seed)
    Ml = p.control_mass
    J0 = evaluate(p, ubar, opts.tol_state).J
    margins = []
    for _ in range(n_probes):
        d = rng.standard_normal(ubar.size)
        d *= radius * rng.uniform() / math.sqrt(d @ (Ml @ d))
        u = project_box(ubar + d, p.alpha, p.beta)
        du = u - ubar
        dist2 = float(du @ (Ml @ du))
        margins.append(evaluate(p, u, opts.tol_state).J - J0 - 0.5 * kappa * dist2)
    worst = min(margins) if margins else 0.0
    return DiagnosticReport(
        "quadratic_growth",
        bool(worst >= -slack),
        {"kappa0": kappa0, "kappa": kappa, "worst_margin": worst, "radius": radius, "n_probes": n_probes},
        tolerance=slack,
        seed=seed,
        inputs_digest=p.digest(),
    )
