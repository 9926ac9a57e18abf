"""Reduced objective, derivatives and box-constrained optimizers.

Controls live in the same nodal Q1 space as the state. The control space
carries the lumped mass M_L, so a nodal field g represents the derivative
through J'(u)v = g . (M_L v) and the nodal clamp is the metric projection.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import CapabilityError, UsageError
from .mesh import weighted_mass
from .problem import ProblemSpec
from .report import DiagnosticReport
from .solver import Linearization, _f_quad, solve_state_newton

log = logging.getLogger(__name__)


@dataclass
class OptOptions:
    max_outer: int = 100
    tol_opt: float = 1e-10
    armijo_c: float = 1e-4
    min_step: float = 1e-12
    tau_active: float = 1e-12
    step_bounds: tuple[float, float] = (1e-6, 1e6)
    tol_state: float = 1e-10

    def __post_init__(self):
        if not self.tol_opt > 0:
            raise UsageError("tol_opt must be positive")
        if self.tau_active < 0:
            raise UsageError("tau_active must be nonnegative")


@dataclass
class OptResult:
    u: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    J_history: list[float] = field(default_factory=list)
    residual_history: list[float] = field(default_factory=list)
    status: str = "max_iter"
    iterations: int = 0
    method: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "status": self.status,
            "iterations": self.iterations,
            "J_history": [float(v) for v in self.J_history],
            "residual_history": [float(v) for v in self.residual_history],
            "diagnostics": self.diagnostics,
        }


class ControlPoint:
    """State, adjoint and factorized linearization at a control ``u``."""

    def __init__(self, p: ProblemSpec, u, tol_state: float = 1e-10):
        self.p = p
        self.u = np.asarray(u, dtype=float)
        self.y = solve_state_newton(p, self.u, tol_state).y
        self.lin = Linearization(p, self.y)
        g = p.grid
        yq = g.to_quad(self.y)
        self.misfit = float(np.sum(p.quad.weight * p.objective(yq, p.target_quad, 0)))
        self.J = self.misfit + 0.5 * p.nu * float(self.u @ (p.control_mass @ self.u))
        self.phi = self.lin.solve_transpose(
            g.assemble_local_vector((p.quad.weight * p.objective(yq, p.target_quad, 1)) @ p.quad.phi)
        )
        self.grad = self.phi + p.nu * self.u
        self._yq = yq
        self._curvature = None

    @property
    def curvature_matrix(self):
        """Mass matrix weighted by L''(y) - phi f''(y) at quadrature points."""
        if self._curvature is None:
            p = self.p
            w = p.objective(self._yq, p.target_quad, 2)
            if p.f.kind != "zero":
                w = w - p.grid.to_quad(self.phi) * _f_quad(p, self._yq, 2)
            self._curvature = weighted_mass(p.grid, w)
        return self._curvature

    def hessian_vector(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        z = self.lin.solve(self.p.control_mass @ v)
        return self.lin.solve_transpose(self.curvature_matrix @ z) + self.p.nu * v

    def hessian_form(self, v, w) -> float:
        return float(np.asarray(w) @ (self.p.control_mass @ self.hessian_vector(v)))

    def projected(self) -> np.ndarray:
        return project_box(-self.phi / self.p.nu, self.p.alpha, self.p.beta)

    def residual(self) -> float:
        d = self.u - self.projected()
        return float(np.sqrt(max(d @ (self.p.control_mass @ d), 0.0)))


def evaluate(p: ProblemSpec, u, tol_state: float = 1e-10) -> ControlPoint:
    return ControlPoint(p, u, tol_state)


def eval_objective(p: ProblemSpec, u) -> float:
    return evaluate(p, u).J


def eval_gradient(p: ProblemSpec, u) -> np.ndarray:
    return evaluate(p, u).grad


def hessian_vector(p: ProblemSpec, u, v) -> np.ndarray:
    if not p.f.is_c2:
        raise CapabilityError("Hessian needs a C2 nonlinearity")
    return evaluate(p, u).hessian_vector(v)


def project_box(u, alpha: float, beta: float) -> np.ndarray:
    if not alpha < beta:
        raise UsageError(f"need alpha < beta, got [{alpha}, {beta}]")
    return np.clip(np.asarray(u, dtype=float), alpha, beta)


def optimality_residual(p: ProblemSpec, u) -> float:
    """||u - Proj(-phi_u / nu)|| in the discrete L2 norm."""
    return evaluate(p, u).residual()


def _mdot(p: ProblemSpec, a, b) -> float:
    return float(a @ (p.control_mass @ b))


def _projected_step(p, pt, s, opts, result):
    """Armijo backtracking along the projected path; returns the accepted point or None."""
    while s >= opts.min_step:
        u_new = project_box(pt.u - s * pt.grad, p.alpha, p.beta)
        new = evaluate(p, u_new, opts.tol_state)
        if new.J <= pt.J + opts.armijo_c * _mdot(p, pt.grad, u_new - pt.u):
            return new, s
        s *= 0.5
    result.diagnostics["last_step"] = s
    return None, s


def _finish(result: OptResult, pt: ControlPoint) -> OptResult:
    result.u, result.y, result.phi = pt.u, pt.y, pt.phi
    return result


def optimize_projected_gradient(p: ProblemSpec, u0, opts: OptOptions | None = None) -> OptResult:
    """Projected gradient with Barzilai-Borwein initial steps and Armijo backtracking on J."""
    opts = opts or OptOptions()
    lo, hi = opts.step_bounds
    pt = evaluate(p, project_box(u0, p.alpha, p.beta), opts.tol_state)
    result = OptResult(pt.u, pt.y, pt.phi, method="projected_gradient")
    s = min(max(1.0 / p.nu, lo), hi)
    for k in range(opts.max_outer + 1):
        res = pt.residual()
        result.J_history.append(pt.J)
        result.residual_history.append(res)
        if res <= opts.tol_opt:
            result.status = "converged"
            break
        if k == opts.max_outer:
            result.status = "max_iter"
            break
        new, s_used = _projected_step(p, pt, s, opts, result)
        if new is None:
            result.status = "line_search_failure"
            break
        du, dg = new.u - pt.u, new.grad - pt.grad
        curv = _mdot(p, du, dg)
        s = _mdot(p, du, du) / curv if curv > 0 else hi
        s = min(max(s, lo), hi)
        pt = new
        result.iterations += 1
    return _finish(result, pt)


def _active_sets(p: ProblemSpec, pt: ControlPoint, tau: float):
    q = -pt.phi / p.nu
    upper = (q - p.beta > tau) if math.isfinite(p.beta) else np.zeros(q.shape, bool)
    lower = (p.alpha - q > tau) if math.isfinite(p.alpha) else np.zeros(q.shape, bool)
    return lower, upper


def _newton_direction(p: ProblemSpec, pt: ControlPoint, lower, upper):
    """Semismooth Newton step: bounds on active nodes, reduced Hessian solve on the rest."""
    delta = np.zeros_like(pt.u)
    delta[lower] = p.alpha - pt.u[lower]
    delta[upper] = p.beta - pt.u[upper]
    free = ~(lower | upper)
    nf = int(free.sum())
    if nf:
        rhs = -pt.grad[free]
        if np.any(delta):
            rhs = rhs - pt.hessian_vector(delta)[free]

        def matvec(x):
            v = np.zeros_like(pt.u)
            v[free] = x
            return pt.hessian_vector(v)[free]

        op = spla.LinearOperator((nf, nf), matvec=matvec)
        scale = max(float(np.linalg.norm(rhs)), 1e-300)
        x, info = spla.gmres(op, rhs, rtol=1e-13, atol=1e-15 * scale, restart=min(nf, 100), maxiter=50)
        if info != 0:
            return None
        delta[free] = x
    return delta


def optimize_semismooth_newton(p: ProblemSpec, u0, opts: OptOptions | None = None) -> OptResult:
    """Primal-dual active set iteration on u = Proj(-phi(u)/nu).

    Falls back to a projected gradient step whenever the Newton direction has
    nonpositive curvature or the reduced solve fails.
    """
    opts = opts or OptOptions()
    if not p.f.is_c2:
        raise CapabilityError("semismooth Newton needs a C2 nonlinearity")
    pt = evaluate(p, np.asarray(u0, dtype=float), opts.tol_state)
    result = OptResult(pt.u, pt.y, pt.phi, method="semismooth_newton")
    result.diagnostics = {"active_sizes": [], "fallback_steps": 0}
    previous = None
    for k in range(opts.max_outer + 1):
        res = pt.residual()
        result.J_history.append(pt.J)
        result.residual_history.append(res)
        lower, upper = _active_sets(p, pt, opts.tau_active)
        result.diagnostics["active_sizes"].append([int(lower.sum()), int(upper.sum())])
        if res <= opts.tol_opt:
            result.status = "converged"
            break
        if k == opts.max_outer:
            result.status = "max_iter"
            break
        delta = _newton_direction(p, pt, lower, upper)
        curvature = pt.hessian_form(delta, delta) if delta is not None else -1.0
        if delta is None or curvature <= 0:
            result.diagnostics["fallback_steps"] += 1
            new, _ = _projected_step(p, pt, 1.0 / p.nu, opts, result)
            if new is None:
                result.status = "line_search_failure"
                break
        else:
            u_new = pt.u + delta
            u_new[lower] = p.alpha
            u_new[upper] = p.beta
            new = evaluate(p, u_new, opts.tol_state)
        previous = (lower, upper)
        pt = new
        result.iterations += 1
    result.diagnostics["active_set_stable"] = previous is not None and all(
        np.array_equal(a, b) for a, b in zip(previous, _active_sets(p, pt, opts.tau_active))
    )
    return _finish(result, pt)


# second-order conditions -----------------------------------------------------

def critical_cone(p: ProblemSpec, pt: ControlPoint, tau: float = 1e-12):
    """Split nodes into (free, sign>=0, sign<=0, fixed-to-zero) masks of the discrete cone."""
    tie = 1e-12
    at_lo = np.abs(pt.u - p.alpha) <= tie * max(1.0, abs(p.alpha)) if math.isfinite(p.alpha) else np.zeros(pt.u.shape, bool)
    at_hi = np.abs(pt.u - p.beta) <= tie * max(1.0, abs(p.beta)) if math.isfinite(p.beta) else np.zeros(pt.u.shape, bool)
    strong = np.abs(pt.grad) > tau
    zero = (at_lo | at_hi) & strong
    nonneg = at_lo & ~strong
    nonpos = at_hi & ~strong
    free = ~(at_lo | at_hi)
    return free, nonneg, nonpos, zero


def reduced_hessian(pt: ControlPoint, nodes: np.ndarray) -> np.ndarray:
    """Dense (M H) restricted to ``nodes``, built from Hessian-vector products."""
    n = pt.u.size
    idx = np.flatnonzero(nodes)
    H = np.empty((idx.size, idx.size))
    for col, j in enumerate(idx):
        e = np.zeros(n)
        e[j] = 1.0
        H[:, col] = (pt.p.control_mass @ pt.hessian_vector(e))[idx]
    return 0.5 * (H + H.T)


def critical_cone_curvature(
    p: ProblemSpec,
    ubar,
    n_samples: int = 50,
    seed: int = 0,
    opts: OptOptions | None = None,
    stationarity_tol: float | None = None,
) -> DiagnosticReport:
    """Smallest J''(ubar)v^2 over unit directions of the discrete critical cone."""
    opts = opts or OptOptions()
    pt = evaluate(p, ubar, opts.tol_state)
    tol = stationarity_tol if stationarity_tol is not None else max(opts.tol_opt, 1e-8)
    res = pt.residual()
    if res > tol:
        raise UsageError(f"control is not stationary: residual {res:.3e} > {tol:.1e}")
    free, nonneg, nonpos, zero = critical_cone(p, pt, opts.tau_active)
    values = {
        "n_free": int(free.sum()),
        "n_sign_constrained": int(nonneg.sum() + nonpos.sum()),
        "n_strongly_active": int(zero.sum()),
        "residual": res,
    }
    if not (free.any() or nonneg.any() or nonpos.any()):
        values.update(min_curvature=math.inf, vacuous=True)
        return DiagnosticReport("critical_cone_curvature", True, values, seed=seed, inputs_digest=p.digest())

    rayleigh = math.inf
    if free.any():
        idx = np.flatnonzero(free)
        Mff = p.control_mass[idx][:, idx].toarray()
        if idx.size <= 1500:
            Hff = reduced_hessian(pt, free)
            rayleigh = float(sla.eigh(Hff, Mff, eigvals_only=True, subset_by_index=[0, 0])[0])
        else:
            def matvec(x):
                v = np.zeros(pt.u.size)
                v[idx] = x
                return (p.control_mass @ pt.hessian_vector(v))[idx]

            op = spla.LinearOperator((idx.size, idx.size), matvec=matvec)
            rayleigh = float(spla.eigsh(op, k=1, M=p.control_mass[idx][:, idx], which="SA", tol=1e-10)[0][0])

    rng = np.random.default_rng(seed)
    sampled = []
    for _ in range(n_samples):
        v = rng.standard_normal(pt.u.size)
        v[zero] = 0.0
        v[nonneg] = np.abs(v[nonneg])
        v[nonpos] = -np.abs(v[nonpos])
        v /= np.sqrt(_mdot(p, v, v))
        sampled.append(pt.hessian_form(v, v))
    min_sampled = min(sampled) if sampled else math.inf
    minimum = min(rayleigh, min_sampled)
    values.update(min_curvature=minimum, rayleigh_min=rayleigh, sampled_min=min_sampled, vacuous=False)
    return DiagnosticReport("critical_cone_curvature", minimum > 0, values, seed=seed, inputs_digest=p.digest())
