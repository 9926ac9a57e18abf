"""Problem definition, its cached discretization, and the coefficient catalog."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any

import numpy as np
import scipy.sparse as sp

from .errors import MonotonicityError, UsageError
from .mesh import (
    DiffusionTensor,
    RectDomain,
    UniformGrid,
    VectorCoefficient,
    assemble_convection,
    assemble_diffusion,
    assemble_load,
    build_grid,
    mass_matrix,
)
from .nonlinearity import NonlinearitySpec, ObjectiveSpec


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Continuous data of the control problem plus its grid.

    Bounds may be ``-inf``/``inf``; ``stabilization`` adds isotropic artificial
    diffusion and is 0 for every faithful run.
    """

    domain: RectDomain
    nx: int
    ny: int
    a: DiffusionTensor
    b: VectorCoefficient
    f: NonlinearitySpec
    objective: ObjectiveSpec
    alpha: float = -math.inf
    beta: float = math.inf
    stabilization: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.alpha < self.beta:
            raise UsageError(f"need alpha < beta, got [{self.alpha}, {self.beta}]")
        if self.stabilization < 0:
            raise UsageError("stabilization must be >= 0")
        if self.f.kind != "zero" and (
            np.any(self.f.weight(self.quad.qx, self.quad.qy) < 0) or np.any(self.f.weight(*self.grid.node_coords) < 0)
        ):
            raise MonotonicityError("nonlinearity weight a0 must be nonnegative")

    @property
    def nu(self) -> float:
        return self.objective.nu

    @cached_property
    def grid(self) -> UniformGrid:
        return build_grid(self.domain, self.nx, self.ny)

    @property
    def quad(self):
        return self.grid.quadrature(2)

    @cached_property
    def diffusion(self) -> sp.csr_matrix:
        return assemble_diffusion(self.grid, self.a)

    @cached_property
    def convection(self) -> sp.csr_matrix:
        return assemble_convection(self.grid, self.b)

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        return assemble_diffusion(self.grid, DiffusionTensor.identity())

    @cached_property
    def linear_operator(self) -> sp.csr_matrix:
        """A_h + N_h (+ artificial diffusion), the linear part of the state operator."""
        K = self.diffusion + self.convection
        if self.stabilization > 0:
            K = K + self.stabilization * self.laplacian
        return K.tocsr()

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return mass_matrix(self.grid)

    @cached_property
    def control_mass(self) -> sp.csr_matrix:
        """Lumped mass diag(int phi_i); the control space inner product and load operator."""
        return sp.diags(assemble_load(self.grid, 1.0)).tocsr()

    @cached_property
    def target_quad(self) -> np.ndarray:
        g = self.grid
        return g.to_quad(g.nodal(self.objective.target))

    @cached_property
    def f_weight_quad(self) -> np.ndarray:
        return np.broadcast_to(self.f.weight(self.quad.qx, self.quad.qy), self.quad.qx.shape)

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)

    def digest(self) -> str:
        blob = json.dumps(self.meta, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# catalog ---------------------------------------------------------------------

def diffusion_from_config(cfg: dict) -> DiffusionTensor:
    kind = cfg.get("kind", "identity")
    if kind == "identity":
        return DiffusionTensor.identity(cfg.get("scale", 1.0))
    if kind == "constant":
        (a11, a12), (a21, a22) = cfg["matrix"]
        lam = float(np.linalg.eigvalsh(0.5 * (np.array(cfg["matrix"]) + np.array(cfg["matrix"]).T)).min())
        return DiffusionTensor(a11, a12, a21, a22, ellipticity=lam)
    if kind == "anisotropic":
        # (1 + s x1) on the first axis, unit on the second, constant coupling
        s, c = cfg.get("slope", 0.5), cfg.get("coupling", 0.2)
        return DiffusionTensor(f"1 + {s}*x1", c, c, 1.0, ellipticity=cfg.get("ellipticity"))
    raise UsageError(f"unknown diffusion kind {kind!r}")


def convection_from_config(cfg: dict) -> VectorCoefficient:
    kind = cfg.get("kind", "zero")
    if kind == "zero":
        return VectorCoefficient.zero()
    if kind == "constant":
        b1, b2 = cfg["value"]
        return VectorCoefficient(b1, b2)
    if kind == "linear":
        # b(x) = matrix @ (x1, x2) + offset
        (m11, m12), (m21, m22) = cfg.get("matrix", [[0, 0], [0, 0]])
        c1, c2 = cfg.get("offset", [0, 0])
        return VectorCoefficient(f"{m11}*x1 + {m12}*x2 + {c1}", f"{m21}*x1 + {m22}*x2 + {c2}")
    raise UsageError(f"unknown convection kind {kind!r}")


def nonlinearity_from_config(cfg: dict) -> NonlinearitySpec:
    kind = cfg.get("kind", "zero")
    return NonlinearitySpec(kind=kind, a0=cfg.get("a0", 1.0), r=cfg.get("r", 2.0))


def target_from_config(cfg: dict):
    kind = cfg.get("kind", "constant")
    if kind == "constant":
        return float(cfg.get("value", 0.0))
    if kind == "sines":
        A, kx, ky = cfg.get("amplitude", 1.0), cfg.get("kx", 1), cfg.get("ky", 1)
        return f"{A}*sin({kx}*pi*x1)*sin({ky}*pi*x2)"
    raise UsageError(f"unknown target kind {kind!r}")


def _bound(v, default):
    return default if v is None else float(v)


def problem_from_config(cfg: dict) -> ProblemSpec:
    """Build a ProblemSpec from the ``problem`` section of a run config."""
    d = cfg.get("domain", [0.0, 1.0, 0.0, 1.0])
    grid = cfg.get("grid", {})
    obj = cfg.get("objective", {})
    bounds = cfg.get("bounds", [None, None])
    return ProblemSpec(
        domain=RectDomain(*map(float, d)),
        nx=int(grid.get("nx", 16)),
        ny=int(grid.get("ny", grid.get("nx", 16))),
        a=diffusion_from_config(cfg.get("diffusion", {})),
        b=convection_from_config(cfg.get("convection", {})),
        f=nonlinearity_from_config(cfg.get("nonlinearity", {})),
        objective=ObjectiveSpec(target=target_from_config(obj.get("target", {})), nu=float(obj.get("nu", 1e-2))),
        alpha=_bound(bounds[0], -math.inf),
        beta=_bound(bounds[1], math.inf),
        stabilization=float(cfg.get("stabilization", 0.0)),
        meta=cfg,
    )


CATALOG: dict[str, dict[str, Any]] = {
    "linear_quadratic": {
        "convection": {"kind": "zero"},
        "nonlinearity": {"kind": "zero"},
    },
    "power_convected": {
        "convection": {"kind": "linear", "matrix": [[0, 1], [-1, 0]], "offset": [0, 1]},
        "nonlinearity": {"kind": "power", "r": 2, "a0": 1.0},
    },
    "exponential_rotating": {
        "convection": {"kind": "linear", "matrix": [[0, 3], [-3, 0]], "offset": [-1.5, 1.5]},
        "nonlinearity": {"kind": "exponential", "a0": 1.0},
    },
    "power_divergent": {
        "diffusion": {"kind": "anisotropic", "slope": 0.5, "coupling": 0.2},
        "convection": {"kind": "linear", "matrix": [[2, 0], [0, 2]], "offset": [0, 0]},
        "nonlinearity": {"kind": "power", "r": 3, "a0": "1 + x2"},
    },
}

DEFAULT_TARGET = {"kind": "sines", "amplitude": 1.0, "kx": 2, "ky": 1}


def catalog_config(name: str, nx: int = 16, nu: float = 1e-2, bounds=(-1.0, 1.0), target=None) -> dict:
    if name not in CATALOG:
        raise UsageError(f"unknown catalog problem {name!r}; choose from {sorted(CATALOG)}")
    cfg = {
        "domain": [0.0, 1.0, 0.0, 1.0],
        "grid": {"nx": nx, "ny": nx},
        "diffusion": {"kind": "identity"},
        "objective": {"kind": "tracking", "nu": nu, "target": dict(target or DEFAULT_TARGET)},
        "bounds": list(bounds),
        "catalog": name,
    }
    cfg.update(json.loads(json.dumps(CATALOG[name])))
    return cfg


def catalog_problem(name: str, nx: int = 16, nu: float = 1e-2, bounds=(-1.0, 1.0), target=None) -> ProblemSpec:
    return problem_from_config(catalog_config(name, nx, nu, bounds, target))
