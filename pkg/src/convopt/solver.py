"""State, linearized, second-variation and adjoint solves.

The discrete state equation is

    R(y) = K y + F(y) - M_L u = 0,    F(y)_i = int f(x, y_h) phi_i,

with K = A_h + N_h, M_L the lumped mass and every integral taken by the 2x2
Gauss rule. Its exact
Jacobian is K + M[f'(y_h)], so the adjoint below is the transpose of the same
matrix and discrete derivatives are exact up to solver tolerance.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    CapabilityError,
    SolverError,
    StateSolveError,
    TruncationActiveError,
    UsageError,
)
from .mesh import load_from_quad, weighted_mass
from .problem import ProblemSpec
from .report import DiagnosticReport

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MIN_STEP = 2.0**-20


def _factorize(op: sp.spmatrix):
    try:
        return spla.splu(sp.csc_matrix(op))
    except RuntimeError as exc:
        diag = np.abs(op.diagonal())
        raise SolverError(
            f"sparse LU failed: {exc}",
            {"n": op.shape[0], "min_abs_diagonal": float(diag.min()), "max_abs_diagonal": float(diag.max())},
        ) from exc


def solve_linear(op: sp.spmatrix, rhs, method: str = "direct", tol: float = 1e-10) -> np.ndarray:
    """Solve op x = rhs; ``method`` is "direct" (sparse LU) or "gmres" (ILU-preconditioned)."""
    rhs = np.asarray(rhs, dtype=float)
    if op.shape[0] != op.shape[1] or op.shape[0] != rhs.shape[0]:
        raise UsageError(f"shape mismatch: operator {op.shape}, rhs {rhs.shape}")
    target = tol * max(1.0, float(np.linalg.norm(rhs)))
    if method == "direct":
        lu = _factorize(op)
        x = lu.solve(rhs)
        r = rhs - op @ x
        if np.linalg.norm(r) > target:
            x = x + lu.solve(r)
    elif method == "gmres":
        A = sp.csc_matrix(op)
        try:
            ilu = spla.spilu(A, drop_tol=1e-5, fill_factor=20)
        except RuntimeError as exc:
            raise SolverError(f"incomplete factorization failed: {exc}") from exc
        prec = spla.LinearOperator(A.shape, ilu.solve)
        x, info = spla.gmres(A, rhs, M=prec, rtol=0.1 * target / max(np.linalg.norm(rhs), 1e-300),
                             atol=0.1 * target, restart=50, maxiter=200)
        if info != 0:
            raise SolverError("GMRES did not converge", {"info": info})
    else:
        raise UsageError(f"unknown linear solver {method!r}")
    res = float(np.linalg.norm(rhs - op @ x))
    if not np.all(np.isfinite(x)) or res > target:
        raise SolverError("linear solve inaccurate", {"residual": res, "target": target})
    return x


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual: float
    damping: list[float] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    method: str = "newton"


@dataclass
class StateSolution:
    y: np.ndarray
    residual: float
    newton_iterations: int
    globalization_used: bool
    report: SolveReport


# discrete maps ---------------------------------------------------------------

def control_load(p: ProblemSpec, u) -> np.ndarray:
    """Load of a nodal control, lumped so that nodal box projection stays exact."""
    return p.control_mass @ np.asarray(u, dtype=float)


def _f_quad(p: ProblemSpec, yq: np.ndarray, order: int, k: float | None = None) -> np.ndarray:
    q = p.quad
    if k is not None:
        yq = np.clip(yq, -k, k)
    with np.errstate(over="ignore", invalid="ignore"):
        return p.f(q.qx, q.qy, yq, order)


def nonlinear_term(p: ProblemSpec, y, k: float | None = None) -> np.ndarray:
    """F(y)_i = int f(x, y_h) phi_i, optionally with y_h truncated to [-k, k]."""
    if p.f.kind == "zero":
        return np.zeros(p.grid.n_dofs)
    return load_from_quad(p.grid, _f_quad(p, p.grid.to_quad(y), 0, k))


def state_residual(p: ProblemSpec, y, load, k: float | None = None) -> np.ndarray:
    return p.linear_operator @ y + nonlinear_term(p, y, k) - load


def linearized_matrix(p: ProblemSpec, y) -> sp.csr_matrix:
    """K + M[df/dy(x, y_h)], the Jacobian of the state residual."""
    if p.f.kind == "zero":
        return p.linear_operator
    c = _f_quad(p, p.grid.to_quad(y), 1)
    return (p.linear_operator + weighted_mass(p.grid, c, check_sign=True)).tocsr()


class Linearization:
    """Factorized linearized state operator at a fixed state ``y``."""

    def __init__(self, p: ProblemSpec, y):
        self.p = p
        self.y = np.asarray(y, dtype=float)
        self.matrix = linearized_matrix(p, self.y)
        self.lu = _factorize(self.matrix)

    def solve(self, rhs) -> np.ndarray:
        return self.lu.solve(np.asarray(rhs, dtype=float))

    def solve_transpose(self, rhs) -> np.ndarray:
        return self.lu.solve(np.asarray(rhs, dtype=float), trans="T")


# state solvers ---------------------------------------------------------------

def _load(p: ProblemSpec, u, load):
    if load is not None:
        return np.asarray(load, dtype=float)
    return control_load(p, u)


def solve_state_newton(
    p: ProblemSpec,
    u=None,
    tol_state: float = 1e-10,
    max_iter: int = 50,
    load=None,
    fallback: bool = True,
) -> StateSolution:
    """Damped Newton on R(y) = 0 with Armijo backtracking on ||R||.

    The count of iterations includes the initial linear solve (f dropped).
    On stagnation the truncated Picard solver takes over.
    """
    b = _load(p, u, load)
    y = solve_linear(p.linear_operator, b)
    r = state_residual(p, y, b)
    rn = float(np.linalg.norm(r))
    report = SolveReport(False, 1, rn, residuals=[rn])
    while rn > tol_state and report.iterations < max_iter:
        delta = solve_linear(linearized_matrix(p, y), -r)
        s = 1.0
        while True:
            y_t = y + s * delta
            with np.errstate(over="ignore", invalid="ignore"):
                r_t = state_residual(p, y_t, b)
            rn_t = float(np.linalg.norm(r_t))
            if np.isfinite(rn_t) and rn_t <= (1.0 - ARMIJO_C * s) * rn:
                break
            s *= 0.5
            if s < MIN_STEP:
                break
        report.iterations += 1
        if s < MIN_STEP:
            log.info("Newton stagnated at residual %.3e", rn)
            break
        y, r, rn = y_t, r_t, rn_t
        report.damping.append(s)
        report.residuals.append(rn)
    report.residual = rn
    report.converged = rn <= tol_state
    if report.converged:
        return StateSolution(y, rn, report.iterations, False, report)
    if not fallback:
        raise StateSolveError(f"Newton failed, residual {rn:.3e}", report)
    u_inf = float(np.max(np.abs(u))) if u is not None and np.size(u) else 0.0
    k = 10.0 * (1.0 + u_inf)
    try:
        sol = solve_state_truncated(p, u, k, tol_state, load=load, y0=None)
    except StateSolveError as exc:
        raise StateSolveError(f"Newton and truncated fallback failed: {exc}", report) from exc
    sol.globalization_used = True
    sol.newton_iterations += report.iterations
    return sol


def solve_state_truncated(
    p: ProblemSpec,
    u=None,
    k: float = 10.0,
    tol: float = 1e-10,
    omega: float = 1.0,
    max_iter: int = 1000,
    load=None,
    y0=None,
) -> StateSolution:
    """Relaxed Picard iteration with f evaluated at the state clipped to [-k, k]."""
    if not k > 0:
        raise UsageError("truncation level must be positive")
    if not 0 < omega <= 1:
        raise UsageError("relaxation must lie in (0, 1]")
    b = _load(p, u, load)
    lu = _factorize(p.linear_operator)
    y = lu.solve(b) if y0 is None else np.asarray(y0, dtype=float)
    rn = float(np.linalg.norm(state_residual(p, y, b, k)))
    report = SolveReport(False, 0, rn, residuals=[rn], method="picard")
    while rn > tol and report.iterations < max_iter:
        y_new = (1 - omega) * y + omega * lu.solve(b - nonlinear_term(p, y, k))
        rn_new = float(np.linalg.norm(state_residual(p, y_new, b, k)))
        report.iterations += 1
        if not np.isfinite(rn_new) or rn_new > 10 * rn:
            omega *= 0.5
            report.damping.append(omega)
            if omega < 1e-6:
                break
            continue
        y, rn = y_new, rn_new
        report.residuals.append(rn)
    report.residual = rn
    report.converged = rn <= tol
    if not report.converged:
        raise StateSolveError(f"truncated Picard did not converge, residual {rn:.3e}", report)
    ymax = float(np.max(np.abs(y))) if y.size else 0.0
    if ymax >= k:
        raise TruncationActiveError(f"|y|_inf = {ymax:.3g} >= k = {k}; increase the truncation level", report)
    return StateSolution(y, rn, report.iterations, False, report)


def solve_state(p: ProblemSpec, u=None, tol_state: float = 1e-10, load=None) -> np.ndarray:
    return solve_state_newton(p, u, tol_state, load=load).y


# derivative solves -----------------------------------------------------------

def solve_linearized(p: ProblemSpec, y, v, lin: Linearization | None = None) -> np.ndarray:
    lin = lin or Linearization(p, y)
    return lin.solve(p.control_mass @ np.asarray(v, dtype=float))


def second_variation_load(p: ProblemSpec, y, z1, z2) -> np.ndarray:
    if not p.f.is_c2:
        raise CapabilityError("second variation needs a C2 nonlinearity")
    if p.f.kind == "zero":
        return np.zeros(p.grid.n_dofs)
    g = p.grid
    zz = g.to_quad(z1) * g.to_quad(z2)
    return load_from_quad(g, -_f_quad(p, g.to_quad(y), 2) * zz)


def solve_second_variation(p: ProblemSpec, y, z1, z2, lin: Linearization | None = None) -> np.ndarray:
    rhs = second_variation_load(p, y, z1, z2)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    lin = lin or Linearization(p, y)
    return lin.solve(rhs)


def objective_gradient_load(p: ProblemSpec, y) -> np.ndarray:
    """int dL/dy(x, y_h) phi_i."""
    return load_from_quad(p.grid, p.objective(p.grid.to_quad(y), p.target_quad, 1))


def solve_adjoint(p: ProblemSpec, y, lin: Linearization | None = None) -> np.ndarray:
    lin = lin or Linearization(p, y)
    return lin.solve_transpose(objective_gradient_load(p, y))


# comparison principle --------------------------------------------------------

def comparison_check(p: ProblemSpec, u1, u2, tol: float = 1e-9) -> DiagnosticReport:
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if np.any(u1 > u2):
        raise UsageError("comparison check needs u1 <= u2 nodally")
    y1 = solve_state(p, u1)
    y2 = solve_state(p, u2)
    violation = float(np.max(y1 - y2)) if y1.size else -math.inf
    return DiagnosticReport(
        "comparison",
        violation <= tol,
        {"max_violation": violation, "argmax": int(np.argmax(y1 - y2))},
        tolerance=tol,
        inputs_digest=p.digest(),
    )
