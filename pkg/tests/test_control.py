import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy.optimize import lsq_linear

from _util import CUBE, make
from convopt.control import (
    OptOptions,
    critical_cone_curvature,
    eval_gradient,
    eval_objective,
    evaluate,
    hessian_vector,
    optimality_residual,
    optimize_projected_gradient,
    optimize_semismooth_newton,
    project_box,
    reduced_hessian,
)
from convopt.errors import CapabilityError, UsageError
from convopt.mesh import interior_values, load_from_quad
from convopt.nonlinearity import NonlinearitySpec
from convopt.problem import CATALOG, catalog_problem
from convopt.solver import solve_state

TARGET = "sin(2*pi*x1)*sin(pi*x2)"


def reduced_system(p):
    """Dense H = S^T M S + nu M_L and rhs S^T b_d of the linear-quadratic problem."""
    K = p.linear_operator.toarray()
    M = p.mass.toarray()
    Ml = p.control_mass.toarray()
    S = np.linalg.solve(K, Ml)
    bd = load_from_quad(p.grid, p.target_quad)
    return S.T @ M @ S + p.nu * Ml, S.T @ bd


def kkt_oracle(p):
    """Monolithic (y, u, phi) solve of the unconstrained optimality system."""
    K = p.linear_operator.toarray()
    M = p.mass.toarray()
    Ml = p.control_mass.toarray()
    n = K.shape[0]
    Z = np.zeros((n, n))
    A = np.block([[K, -Ml, Z], [-M, Z, K.T], [Z, p.nu * Ml, Ml]])
    rhs = np.concatenate([np.zeros(n), -load_from_quad(p.grid, p.target_quad), np.zeros(n)])
    return np.linalg.solve(A, rhs)[n : 2 * n]


def box_oracle(p):
    H, c = reduced_system(p)
    R = np.linalg.cholesky(H).T
    sol = lsq_linear(R, sla.solve_triangular(R, c, trans="T"), bounds=(p.alpha, p.beta), method="bvls", tol=1e-14)
    return sol.x


# objective and gradient ------------------------------------------------------

def test_objective_zero_at_reachable_target():
    p0 = make(8, b=("x2", "1 - x1"), f=CUBE)
    y0 = solve_state(p0, np.zeros(p0.grid.n_dofs))
    p = make(8, b=("x2", "1 - x1"), f=CUBE, target=y0)
    pt = evaluate(p, np.zeros_like(y0))
    assert pt.J == 0.0
    assert not np.any(pt.grad)
    assert optimality_residual(p, np.zeros_like(y0)) == 0.0


def test_objective_constant_control_linear_case():
    p = make(8, nu=0.3)
    c = 1.7
    u = np.full(p.grid.n_dofs, c)
    y = np.linalg.solve(p.linear_operator.toarray(), p.control_mass @ u)
    area = p.control_mass.diagonal().sum()
    expect = 0.5 * y @ (p.mass @ y) + 0.5 * p.nu * c**2 * area
    assert eval_objective(p, u) == pytest.approx(expect, rel=1e-12)
    # lumped interior mass tends to the area of the square
    assert area == pytest.approx((1 - p.grid.h) ** 2, rel=1e-12)


@given(hnp.arrays(float, 49, elements=st.floats(-3, 3)))
def test_objective_dominates_tikhonov(u):
    p = make(8, b=("x2", "1 - x1"), f=CUBE, target=TARGET)
    assert eval_objective(p, u) >= 0.5 * p.nu * u @ (p.control_mass @ u) - 1e-15


def test_gradient_nu_shift():
    u = np.linspace(-1, 1, 49)
    g1 = eval_gradient(make(8, f=CUBE, target=TARGET, nu=1.0), u)
    g2 = eval_gradient(make(8, f=CUBE, target=TARGET, nu=2.0), u)
    np.testing.assert_allclose(g2 - g1, u, atol=1e-12)


# Hessian ---------------------------------------------------------------------

def test_hessian_linear_case_formula():
    p = make(8, b=("x1", "x2"), target=TARGET)
    pt = evaluate(p, np.zeros(p.grid.n_dofs))
    v = np.cos(np.arange(p.grid.n_dofs))
    z = pt.lin.solve(p.control_mass @ v)
    vv = v @ (p.control_mass @ v)
    expect = z @ (p.mass @ z) + p.nu * vv
    assert pt.hessian_form(v, v) == pytest.approx(expect, rel=1e-12)
    assert pt.hessian_form(v, v) >= p.nu * vv


@given(seed=st.integers(0, 2**31))
def test_hessian_symmetric(seed):
    p = make(8, b=("x2", "1 - x1"), f=CUBE, target=TARGET)
    rng = np.random.default_rng(seed)
    u, v, w = rng.standard_normal((3, p.grid.n_dofs))
    pt = evaluate(p, u)
    assert abs(pt.hessian_form(v, w) - pt.hessian_form(w, v)) <= 1e-9


def test_hessian_needs_c2():
    p = make(4, f=NonlinearitySpec("power", r=1.0))
    z = np.zeros(p.grid.n_dofs)
    with pytest.raises(CapabilityError):
        hessian_vector(p, z, z)


# projection ------------------------------------------------------------------

def test_projection_examples():
    np.testing.assert_array_equal(project_box([-3, 0.5, 2], -1, 1), [-1, 0.5, 1])
    np.testing.assert_array_equal(project_box([0.1, -0.2], -1, 1), [0.1, -0.2])
    np.testing.assert_array_equal(project_box([-5.0, 5.0], -math.inf, 1), [-5.0, 1.0])
    with pytest.raises(UsageError):
        project_box([0.0], 1, 1)


@given(
    hnp.arrays(float, st.integers(1, 30), elements=st.floats(-1e6, 1e6)),
    st.floats(-10, 0, exclude_max=True),
    st.floats(0, 10, exclude_min=True),
)
def test_projection_idempotent_and_feasible(u, a, b):
    once = project_box(u, a, b)
    np.testing.assert_array_equal(project_box(once, a, b), once)
    assert np.all((once >= a) & (once <= b))


def test_unconstrained_residual_formula():
    p = make(8, b=("x2", "1 - x1"), f=CUBE, target=TARGET)
    u = np.linspace(0, 2, p.grid.n_dofs)
    pt = evaluate(p, u)
    d = u + pt.phi / p.nu
    assert optimality_residual(p, u) == pytest.approx(math.sqrt(d @ (p.control_mass @ d)), rel=1e-14)


# optimizers ------------------------------------------------------------------

def test_pg_reachable_target_gives_zero():
    p0 = make(8, f=CUBE)
    y0 = solve_state(p0, np.zeros(p0.grid.n_dofs))
    p = make(8, f=CUBE, target=y0, alpha=-1, beta=1)
    res = optimize_projected_gradient(p, 0.5 * np.ones_like(y0))
    assert res.converged
    assert np.max(np.abs(res.u)) <= 1e-8
    assert res.J_history[-1] <= 1e-15


def test_pg_unconstrained_matches_kkt():
    p = make(8, b=("x1", "x2"), target=TARGET)
    res = optimize_projected_gradient(p, np.zeros(p.grid.n_dofs))
    assert res.converged
    assert np.max(np.abs(res.u - kkt_oracle(p))) <= 1e-6


def test_pg_active_bounds_match_oracle():
    p_free = make(8, target=TARGET)
    beta = 0.5 * kkt_oracle(p_free).max()
    p = make(8, target=TARGET, beta=beta)
    res = optimize_projected_gradient(p, np.zeros(p.grid.n_dofs))
    assert res.converged and res.residual_history[-1] <= OptOptions().tol_opt
    ref = box_oracle(p)
    assert np.max(np.abs(res.u - ref)) <= 1e-6
    active = ref >= beta - 1e-9
    assert active.any()
    assert np.all(res.u[active] == beta)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_pg_objective_monotone(name):
    res = optimize_projected_gradient(catalog_problem(name, nx=8), np.zeros(49))
    assert res.converged
    assert all(b <= a for a, b in zip(res.J_history, res.J_history[1:]))


def test_ssn_linear_quadratic_two_steps():
    p = make(8, b=("1 + x1", "x2"), target=TARGET)
    res = optimize_semismooth_newton(p, np.zeros(p.grid.n_dofs))
    assert res.converged and res.iterations <= 2
    assert np.max(np.abs(res.u - kkt_oracle(p))) <= 1e-8


def test_ssn_matches_box_oracle():
    p = make(8, target=TARGET, alpha=-0.5, beta=0.5)
    res = optimize_semismooth_newton(p, np.zeros(p.grid.n_dofs))
    assert res.converged
    assert np.max(np.abs(res.u - box_oracle(p))) <= 1e-8


def test_ssn_fixed_point():
    p = catalog_problem("power_convected", nx=8)
    first = optimize_semismooth_newton(p, np.zeros(49))
    again = optimize_semismooth_newton(p, first.u)
    assert again.iterations <= 1
    assert again.diagnostics["active_sizes"][0] == first.diagnostics["active_sizes"][-1]


def test_ssn_superlinear_semilinear():
    p = catalog_problem("power_convected", nx=16, bounds=(None, None))
    p = p.with_(alpha=-math.inf, beta=math.inf, objective=p.objective.__class__(target=TARGET, nu=1e-3))
    u0 = 5 * interior_values(p.grid, "sin(pi*x1)*sin(pi*x2)")
    r = optimize_semismooth_newton(p, u0, OptOptions(tol_opt=1e-13)).residual_history
    assert len(r) >= 3
    ratios = [b / a for a, b in zip(r, r[1:]) if a > 1e-12]
    assert ratios[-1] < 0.1 and ratios[-1] <= ratios[0]


def test_ssn_budget_exhausted():
    p = catalog_problem("power_divergent", nx=8)
    res = optimize_semismooth_newton(p, np.zeros(49), OptOptions(max_outer=0))
    assert res.status == "max_iter" and not res.converged


# second-order ----------------------------------------------------------------

def test_cone_linear_case_at_least_nu():
    p = make(8, b=("x1", "x2"), target=TARGET, alpha=-0.5, beta=0.5)
    ubar = optimize_semismooth_newton(p, np.zeros(49)).u
    rep = critical_cone_curvature(p, ubar)
    assert rep.values["min_curvature"] >= p.nu - 1e-9


def test_cone_unconstrained_dense_oracle():
    p = make(4, b=("x2", "1 - x1"), f=CUBE, target=TARGET)
    ubar = optimize_semismooth_newton(p, np.zeros(9)).u
    rep = critical_cone_curvature(p, ubar, n_samples=0)
    pt = evaluate(p, ubar)
    Ml = p.control_mass.toarray()
    H = np.column_stack([Ml @ pt.hessian_vector(e) for e in np.eye(9)])
    lam = sla.eigh(0.5 * (H + H.T), Ml, eigvals_only=True)[0]
    assert rep.values["n_free"] == 9
    assert rep.values["min_curvature"] == pytest.approx(lam, rel=1e-10)
    np.testing.assert_allclose(reduced_hessian(pt, np.ones(9, bool)), 0.5 * (H + H.T), atol=1e-14)


def test_cone_fully_active_vacuous():
    p = make(8, target=100.0, alpha=-1, beta=1)
    res = optimize_semismooth_newton(p, np.zeros(49))
    assert np.all(res.u == 1.0)
    rep = critical_cone_curvature(p, res.u)
    assert rep.passed and rep.values["vacuous"] and rep.values["min_curvature"] == math.inf


def test_cone_rejects_nonstationary():
    p = make(4, target=TARGET)
    with pytest.raises(UsageError):
        critical_cone_curvature(p, np.ones(9))
