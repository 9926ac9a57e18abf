"""Structured Q1 mesh of a rectangle and assembly of the discrete operators.

Nodes are numbered row-major with x fastest: ``node = j * (nx + 1) + i``.
Homogeneous Dirichlet conditions are imposed by keeping only interior nodes
as degrees of freedom; every assembled matrix and load lives on those dofs.

Example
-------
>>> grid = build_grid(RectDomain(0.0, 1.0, 0.0, 1.0), 2, 2)
>>> assemble_diffusion(grid, DiffusionTensor.identity()).toarray()
array([[2.66666667]])
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import sympy

from .errors import CoefficientError, MonotonicityError, UsageError

X1, X2 = sympy.symbols("x1 x2", real=True)


def _lambdify(expr) -> Callable:
    try:
        expr = sympy.sympify(expr, locals={"x1": X1, "x2": X2})
        fn = sympy.lambdify((X1, X2), expr, modules="numpy")
    except (sympy.SympifyError, KeyError, TypeError, SyntaxError) as exc:
        raise CoefficientError(f"cannot interpret coefficient {expr!r}: {exc}") from exc

    def evaluate(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        with np.errstate(all="ignore"):
            return np.broadcast_to(np.asarray(fn(x1, x2), dtype=float), np.broadcast(x1, x2).shape).copy()

    evaluate.expr = expr
    return evaluate


def coefficient(value) -> Callable:
    """Turn a number, expression string or sympy expression into f(x1, x2)."""
    if callable(value) and not isinstance(value, sympy.Basic):
        return value
    return _lambdify(value)


@dataclass(frozen=True)
class RectDomain:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise UsageError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class DofMap:
    node_to_dof: np.ndarray  # -1 marks an eliminated boundary node
    dof_to_node: np.ndarray

    @property
    def n_dofs(self) -> int:
        return len(self.dof_to_node)

    def is_boundary(self, node) -> np.ndarray:
        return self.node_to_dof[node] < 0


@dataclass(frozen=True)
class Quadrature:
    """Tensor Gauss rule on every element of a uniform grid.

    ``phi``, ``dphi_dx`` and ``dphi_dy`` have shape (nq, 4) and are shared by
    all elements; ``qx``/``qy`` hold physical points, shape (ne, nq).
    """

    el_nodes: np.ndarray
    qx: np.ndarray
    qy: np.ndarray
    phi: np.ndarray
    dphi_dx: np.ndarray
    dphi_dy: np.ndarray
    weight: np.ndarray  # physical weight per point, shape (nq,)


def _gauss_1d(n: int):
    pts, wts = np.polynomial.legendre.leggauss(n)
    return 0.5 * (pts + 1.0), 0.5 * wts


@dataclass(frozen=True, eq=False)
class UniformGrid:
    domain: RectDomain
    nx: int
    ny: int
    hx: float = field(init=False)
    hy: float = field(init=False)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise UsageError(f"need nx, ny >= 2 for an interior dof, got {self.nx}x{self.ny}")
        d = self.domain
        object.__setattr__(self, "hx", (d.x_max - d.x_min) / self.nx)
        object.__setattr__(self, "hy", (d.y_max - d.y_min) / self.ny)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return (self.nx - 1) * (self.ny - 1)

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @cached_property
    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        d = self.domain
        xs = np.linspace(d.x_min, d.x_max, self.nx + 1)
        ys = np.linspace(d.y_min, d.y_max, self.ny + 1)
        X, Y = np.meshgrid(xs, ys)
        return X.ravel(), Y.ravel()

    @cached_property
    def dofmap(self) -> DofMap:
        i = np.tile(np.arange(self.nx + 1), self.ny + 1)
        j = np.repeat(np.arange(self.ny + 1), self.nx + 1)
        interior = (i > 0) & (i < self.nx) & (j > 0) & (j < self.ny)
        node_to_dof = np.full(self.n_nodes, -1, dtype=np.int64)
        node_to_dof[interior] = np.arange(interior.sum())
        return DofMap(node_to_dof, np.flatnonzero(interior))

    @cached_property
    def el_nodes(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        n0 = (j * (self.nx + 1) + i).ravel()
        return np.stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1], axis=1)

    def quadrature(self, n: int = 2) -> Quadrature:
        cache = self.__dict__.setdefault("_quad_cache", {})
        if n not in cache:
            cache[n] = self._build_quadrature(n)
        return cache[n]

    def _build_quadrature(self, n: int) -> Quadrature:
        g, w = _gauss_1d(n)
        xi, eta = (a.ravel() for a in np.meshgrid(g, g))
        weights = np.outer(w, w).ravel()
        phi = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=1)
        dxi = np.stack([-(1 - eta), 1 - eta, eta, -eta], axis=1) / self.hx
        deta = np.stack([-(1 - xi), -xi, xi, 1 - xi], axis=1) / self.hy
        X, Y = self.node_coords
        x0 = X[self.el_nodes[:, 0]][:, None]
        y0 = Y[self.el_nodes[:, 0]][:, None]
        return Quadrature(
            el_nodes=self.el_nodes,
            qx=x0 + xi[None, :] * self.hx,
            qy=y0 + eta[None, :] * self.hy,
            phi=phi,
            dphi_dx=dxi,
            dphi_dy=deta,
            weight=weights * self.hx * self.hy,
        )

    # field helpers

    def to_full(self, v) -> np.ndarray:
        """Nodal vector on all nodes; interior-length input gets boundary zeros."""
        v = np.asarray(v, dtype=float)
        if v.shape == (self.n_nodes,):
            return v
        if v.shape != (self.n_dofs,):
            raise UsageError(f"field of length {v.shape} does not match grid")
        full = np.zeros(self.n_nodes)
        full[self.dofmap.dof_to_node] = v
        return full

    def nodal(self, g) -> np.ndarray:
        """Full nodal values from a scalar, callable/expression or nodal array."""
        if isinstance(g, np.ndarray) or isinstance(g, (list, tuple)):
            return self.to_full(g)
        if np.isscalar(g) and not isinstance(g, str):
            return np.full(self.n_nodes, float(g))
        return coefficient(g)(*self.node_coords)

    def to_quad(self, v, n: int = 2) -> np.ndarray:
        """Bilinear interpolant of a nodal field at quadrature points, shape (ne, nq)."""
        q = self.quadrature(n)
        full = self.to_full(v)
        return full[q.el_nodes] @ q.phi.T

    def grad_to_quad(self, v, n: int = 2) -> tuple[np.ndarray, np.ndarray]:
        q = self.quadrature(n)
        local = self.to_full(v)[q.el_nodes]
        return local @ q.dphi_dx.T, local @ q.dphi_dy.T

    @cached_property
    def _coo_index(self):
        en = self.el_nodes
        rows = np.repeat(en, 4, axis=1).ravel()
        cols = np.tile(en, (1, 4)).ravel()
        d = self.dofmap.node_to_dof
        keep = (d[rows] >= 0) & (d[cols] >= 0)
        return d[rows[keep]], d[cols[keep]], keep

    def assemble_local(self, local: np.ndarray) -> sp.csr_matrix:
        """Scatter element matrices (ne, 4, 4) into the interior-dof matrix."""
        r, c, keep = self._coo_index
        m = sp.coo_matrix((local.reshape(-1)[keep], (r, c)), shape=(self.n_dofs, self.n_dofs))
        return m.tocsr()

    def assemble_local_vector(self, local: np.ndarray) -> np.ndarray:
        full = np.bincount(self.el_nodes.ravel(), weights=local.ravel(), minlength=self.n_nodes)
        return full[self.dofmap.dof_to_node]


def build_grid(domain: RectDomain, nx: int, ny: int) -> UniformGrid:
    return UniformGrid(domain, int(nx), int(ny))


class DiffusionTensor:
    """Coefficient matrix (a_ij) of the divergence-form operator.

    ``ellipticity`` is the declared lower bound on the symmetric part; if
    omitted, assembly only requires it to be positive.
    """

    def __init__(self, a11, a12, a21, a22, ellipticity: float | None = None):
        self.entries = [coefficient(a) for a in (a11, a12, a21, a22)]
        self.ellipticity = ellipticity

    @classmethod
    def identity(cls, scale: float = 1.0) -> "DiffusionTensor":
        return cls(scale, 0.0, 0.0, scale, ellipticity=scale)

    def __call__(self, x1, x2) -> tuple[np.ndarray, ...]:
        return tuple(a(x1, x2) for a in self.entries)

    @property
    def is_symmetric(self) -> bool:
        e = [getattr(a, "expr", None) for a in self.entries]
        return e[1] is not None and e[2] is not None and sympy.simplify(e[1] - e[2]) == 0

    def min_eigenvalue(self, x1, x2) -> np.ndarray:
        a11, a12, a21, a22 = self(x1, x2)
        off = 0.5 * (a12 + a21)
        mean = 0.5 * (a11 + a22)
        rad = np.sqrt((0.5 * (a11 - a22)) ** 2 + off**2)
        return mean - rad


class VectorCoefficient:
    def __init__(self, b1, b2):
        self.components = [coefficient(b1), coefficient(b2)]

    @classmethod
    def zero(cls) -> "VectorCoefficient":
        return cls(0.0, 0.0)

    def __call__(self, x1, x2) -> tuple[np.ndarray, np.ndarray]:
        return self.components[0](x1, x2), self.components[1](x1, x2)


def assemble_diffusion(grid: UniformGrid, a: DiffusionTensor) -> sp.csr_matrix:
    q = grid.quadrature(2)
    a11, a12, a21, a22 = a(q.qx, q.qy)
    if not all(np.all(np.isfinite(c)) for c in (a11, a12, a21, a22)):
        raise CoefficientError("non-finite diffusion coefficient")
    lam = a.min_eigenvalue(q.qx, q.qy)
    bound = a.ellipticity if a.ellipticity is not None else 0.0
    if a.ellipticity is not None and a.ellipticity <= 0:
        raise CoefficientError("declared ellipticity constant must be positive")
    if np.any(lam < bound) or np.any(lam <= 0):
        raise CoefficientError(f"ellipticity violated: min eigenvalue {lam.min():.3e} < {bound}")
    gx, gy = q.dphi_dx, q.dphi_dy
    # local[e, i, j] = sum_q w * (a_ij-weighted grad phi_j) . grad phi_i
    w = q.weight
    local = (
        np.einsum("eq,q,qi,qj->eij", a11, w, gx, gx)
        + np.einsum("eq,q,qi,qj->eij", a12, w, gy, gx)
        + np.einsum("eq,q,qi,qj->eij", a21, w, gx, gy)
        + np.einsum("eq,q,qi,qj->eij", a22, w, gy, gy)
    )
    return grid.assemble_local(local)


def assemble_convection(grid: UniformGrid, b: VectorCoefficient) -> sp.csr_matrix:
    """Entries int (b . grad phi_j) phi_i, no stabilization."""
    q = grid.quadrature(2)
    b1, b2 = b(q.qx, q.qy)
    if not (np.all(np.isfinite(b1)) and np.all(np.isfinite(b2))):
        raise CoefficientError("non-finite convection coefficient")
    w = q.weight
    local = np.einsum("eq,q,qj,qi->eij", b1, w, q.dphi_dx, q.phi) + np.einsum(
        "eq,q,qj,qi->eij", b2, w, q.dphi_dy, q.phi
    )
    return grid.assemble_local(local)


def weighted_mass(grid: UniformGrid, cq: np.ndarray, check_sign: bool = False) -> sp.csr_matrix:
    """Mass matrix weighted by values ``cq`` given at quadrature points."""
    q = grid.quadrature(2)
    cq = np.broadcast_to(np.asarray(cq, dtype=float), q.qx.shape)
    if not np.all(np.isfinite(cq)):
        raise CoefficientError("non-finite reaction coefficient")
    if check_sign and np.any(cq < 0):
        raise MonotonicityError(f"negative reaction coefficient {cq.min():.3e}")
    local = np.einsum("eq,q,qi,qj->eij", cq, q.weight, q.phi, q.phi)
    return grid.assemble_local(local)


def assemble_reaction(grid: UniformGrid, c) -> sp.csr_matrix:
    """Weighted mass matrix for a nonnegative coefficient ``c``.

    ``c`` is a scalar, an expression/callable of (x1, x2) or a nodal array;
    nodal data is interpolated bilinearly.
    """
    nodal = grid.nodal(c)
    if np.any(nodal < 0):
        raise MonotonicityError(f"negative reaction coefficient {nodal.min():.3e}")
    return weighted_mass(grid, grid.to_quad(nodal))


def mass_matrix(grid: UniformGrid) -> sp.csr_matrix:
    return weighted_mass(grid, 1.0)


def load_from_quad(grid: UniformGrid, gq: np.ndarray) -> np.ndarray:
    """Interior load vector int g phi_i from values of g at quadrature points."""
    q = grid.quadrature(2)
    gq = np.broadcast_to(np.asarray(gq, dtype=float), q.qx.shape)
    return grid.assemble_local_vector((gq * q.weight) @ q.phi)


def assemble_load(grid: UniformGrid, g) -> np.ndarray:
    """Interior load vector int g_h phi_i with g_h the bilinear interpolant of g."""
    values = grid.nodal(g)
    if not np.all(np.isfinite(values)):
        raise CoefficientError("load is not finite at every node (boundary included)")
    return load_from_quad(grid, grid.to_quad(values))


def l2_norm(grid: UniformGrid, v, M: sp.spmatrix | None = None) -> float:
    """Discrete L2 norm ||v||_{M_h} of an interior field."""
    M = mass_matrix(grid) if M is None else M
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


def grid_points(grid: UniformGrid) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates of the interior dofs."""
    X, Y = grid.node_coords
    nodes = grid.dofmap.dof_to_node
    return X[nodes], Y[nodes]


def interior_values(grid: UniformGrid, g: Callable | Sequence | float) -> np.ndarray:
    """Evaluate ``g`` at interior nodes (control/state fields)."""
    return grid.nodal(g)[grid.dofmap.dof_to_node]
