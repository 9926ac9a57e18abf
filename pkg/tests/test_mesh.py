import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from convopt.errors import CoefficientError, MonotonicityError, UsageError
from convopt.mesh import (
    DiffusionTensor,
    RectDomain,
    VectorCoefficient,
    assemble_convection,
    assemble_diffusion,
    assemble_load,
    assemble_reaction,
    build_grid,
    mass_matrix,
)


UNIT = RectDomain(0.0, 1.0, 0.0, 1.0)
I = DiffusionTensor.identity()


def dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A)


@pytest.mark.parametrize(
    "dom,nx,ny,ndofs",
    [(UNIT, 2, 2, 1), (UNIT, 4, 4, 9), (RectDomain(0, 2, 0, 1), 4, 2, 3)],
)
def test_dof_counts(dom, nx, ny, ndofs):
    g = build_grid(dom, nx, ny)
    assert g.n_dofs == ndofs


def test_spacing_on_wide_rectangle():
    g = build_grid(RectDomain(0, 2, 0, 1), 4, 2)
    assert (g.hx, g.hy) == (0.5, 0.5)


@pytest.mark.parametrize("nx,ny", [(1, 4), (4, 1), (0, 0)])
def test_too_coarse_rejected(nx, ny):
    with pytest.raises(UsageError):
        build_grid(UNIT, nx, ny)


def test_node_numbering_is_row_major():
    g = build_grid(RectDomain(0, 2, 0, 1), 4, 2)
    X, Y = g.node_coords
    assert X[1] == 0.5 and Y[1] == 0.0
    assert X[5] == 0.0 and Y[5] == 0.5
    # the single interior row sits at j=1
    np.testing.assert_array_equal(g.dofmap.dof_to_node, [6, 7, 8])


def test_laplacian_single_dof():
    K = assemble_diffusion(build_grid(UNIT, 2, 2), I)
    assert K.shape == (1, 1)
    assert K[0, 0] == pytest.approx(8 / 3, rel=1e-14)


def test_diffusion_linear_in_coefficient(grid8):
    K1 = assemble_diffusion(grid8, I)
    K2 = assemble_diffusion(grid8, DiffusionTensor.identity(2.0))
    np.testing.assert_allclose(dense(K2), 2 * dense(K1), rtol=0, atol=1e-14)


def test_laplacian_symmetric_nonnegative_rows(grid8):
    K = dense(assemble_diffusion(grid8, I))
    assert np.max(np.abs(K - K.T)) <= 1e-12 * np.max(np.abs(K))
    assert np.all(K.sum(axis=1) >= -1e-12)


def test_variable_symmetric_tensor_gives_symmetric_matrix(grid8):
    a = DiffusionTensor("1 + x1", "0.2*x2", "0.2*x2", "2 - x2")
    K = dense(assemble_diffusion(grid8, a))
    assert np.max(np.abs(K - K.T)) <= 1e-12 * np.max(np.abs(K))


@pytest.mark.parametrize("n", [2, 4, 8, 16, 32, 64])
def test_laplacian_positive_definite(n):
    K = assemble_diffusion(build_grid(UNIT, n, n), I)
    lam = sla.eigh(dense(K), eigvals_only=True, subset_by_index=[0, 0])[0] if n <= 32 else None
    if lam is None:
        # Cholesky succeeds iff SPD
        np.linalg.cholesky(dense(K))
    else:
        assert lam > 0


def test_ellipticity_violation():
    with pytest.raises(CoefficientError):
        assemble_diffusion(build_grid(UNIT, 4, 4), DiffusionTensor("x1 - 0.5", 0, 0, 1))


def test_zero_convection_is_zero(grid8):
    assert abs(assemble_convection(grid8, VectorCoefficient.zero())).sum() == 0


def test_constant_convection_skew(grid8):
    N = dense(assemble_convection(grid8, VectorCoefficient(1.0, 0.0)))
    assert np.max(np.abs(N + N.T)) <= 1e-14
    rng = np.random.default_rng(0)
    v = rng.standard_normal(N.shape[0])
    assert abs(v @ N @ v) <= 1e-13


def test_divergent_convection_not_skew():
    g = build_grid(UNIT, 4, 4)
    N = dense(assemble_convection(g, VectorCoefficient("x1", 0.0)))
    S = N + N.T
    assert np.max(np.abs(S)) > 1e-3
    # integration by parts with div b = 1: N + N^T = -M
    np.testing.assert_allclose(S, -dense(mass_matrix(g)), atol=1e-14)


def test_convection_rejects_nonfinite(grid8):
    with pytest.raises(CoefficientError):
        assemble_convection(grid8, VectorCoefficient("log(x1 - 0.5)", 0.0))
    with pytest.raises(CoefficientError):
        VectorCoefficient("1/(x1 - x1)", 0.0)


def test_convection_linear_in_b(grid8):
    b1 = VectorCoefficient("x2", "-x1")
    b2 = VectorCoefficient("sin(x1)", "1 + x1*x2")
    b12 = VectorCoefficient("x2 + sin(x1)", "-x1 + 1 + x1*x2")
    lhs = dense(assemble_convection(grid8, b12))
    rhs = dense(assemble_convection(grid8, b1)) + dense(assemble_convection(grid8, b2))
    np.testing.assert_allclose(lhs, rhs, atol=1e-14)


def test_reaction_cases():
    g = build_grid(UNIT, 2, 2)
    assert abs(assemble_reaction(g, 0.0)).sum() == 0
    # int phi_c^2 over the unit square, phi_c the centre hat: (1/3)^2 = 1/9
    assert assemble_reaction(g, 1.0)[0, 0] == pytest.approx(1 / 9, rel=1e-14)


def test_reaction_psd(grid8):
    lam = np.linalg.eigvalsh(dense(assemble_reaction(grid8, 1.0)))
    assert lam.min() >= 0


def test_negative_reaction_rejected(grid8):
    with pytest.raises(MonotonicityError):
        assemble_reaction(grid8, "x1 - 0.5")


def test_load_examples(grid8):
    assert not np.any(assemble_load(grid8, 0.0))
    assert assemble_load(build_grid(UNIT, 2, 2), 1.0)[0] == pytest.approx(0.25, rel=1e-14)
    full = assemble_load(grid8, 1.0).sum()
    # each interior basis integrates to h^2; 49 of them
    assert full == pytest.approx(grid8.n_dofs * grid8.hx * grid8.hy, rel=1e-13)


@given(c=st.floats(-5, 5, allow_nan=False), n=st.integers(2, 10))
def test_load_scales_with_constant(c, n):
    g = build_grid(UNIT, n, n)
    np.testing.assert_allclose(assemble_load(g, c), c * assemble_load(g, 1.0), rtol=1e-14, atol=1e-15)


@given(
    nx=st.integers(2, 12),
    ny=st.integers(2, 12),
    w=st.floats(0.1, 5.0),
    hgt=st.floats(0.1, 5.0),
)
def test_grid_counting(nx, ny, w, hgt):
    g = build_grid(RectDomain(0.0, w, -hgt, 0.0), nx, ny)
    assert g.n_dofs == (nx - 1) * (ny - 1)
    assert g.n_nodes == (nx + 1) * (ny + 1)
    assert g.hx == pytest.approx(w / nx) and g.hy == pytest.approx(hgt / ny)
    # mass matrix reproduces the area of the interior supports
    one = np.ones(g.n_dofs)
    M = mass_matrix(g)
    assert one @ (M @ one) <= w * hgt + 1e-12


def test_load_rejects_nonfinite_nodal_values(grid8):
    with pytest.raises(CoefficientError):
        assemble_load(grid8, "1/x1")
