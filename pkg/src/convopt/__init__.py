"""Finite element optimal control of semilinear elliptic equations with non-monotone convection."""
__version__ = "0.1.0"

from .control import OptOptions, OptResult, evaluate, optimize_projected_gradient, optimize_semismooth_newton
from .mesh import DiffusionTensor, RectDomain, UniformGrid, VectorCoefficient, build_grid
from .nonlinearity import NonlinearitySpec, ObjectiveSpec
from .problem import CATALOG, ProblemSpec, catalog_problem, problem_from_config
from .report import DiagnosticReport
from .solver import solve_state, solve_state_newton

__all__ = [
    "__version__",
    "CATALOG",
    "DiagnosticReport",
    "DiffusionTensor",
    "NonlinearitySpec",
    "ObjectiveSpec",
    "OptOptions",
    "OptResult",
    "ProblemSpec",
    "RectDomain",
    "UniformGrid",
    "VectorCoefficient",
    "build_grid",
    "catalog_problem",
    "evaluate",
    "optimize_projected_gradient",
    "optimize_semismooth_newton",
    "problem_from_config",
    "solve_state",
    "solve_state_newton",
]
