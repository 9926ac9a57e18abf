"""Catalog of monotone nonlinearities f(x, y) and tracking integrands L(x, y)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import CapabilityError, UsageError
from .mesh import coefficient

KINDS = ("zero", "power", "exponential")


@dataclass(frozen=True, eq=False)
class NonlinearitySpec:
    """f(x, y) = a0(x)|y|^r y  (power),  a0(x) exp(y)  (exponential) or 0.

    ``a0`` may be a number, an expression in x1, x2, or a callable; it must be
    nonnegative on the grid, which is checked when the problem is built.
    """

    kind: str = "zero"
    a0: Any = 1.0
    r: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind == "power" and self.r < 1:
            raise UsageError(f"power exponent r={self.r} must be >= 1")
        object.__setattr__(self, "_a0", coefficient(self.a0))

    @property
    def max_order(self) -> int:
        if self.kind == "power" and self.r == 1:
            return 1
        return 2

    @property
    def is_c2(self) -> bool:
        return self.max_order >= 2

    def weight(self, x1, x2) -> np.ndarray:
        return self._a0(x1, x2)

    def __call__(self, x1, x2, y, order: int = 0) -> np.ndarray:
        """Vectorized f and its y-derivatives; x1, x2, y broadcast together."""
        if order > self.max_order:
            raise CapabilityError(f"{self.kind} with r={self.r} has no derivative of order {order}")
        y = np.asarray(y, dtype=float)
        if self.kind == "zero":
            return np.zeros(np.broadcast(x1, x2, y).shape)
        a0 = self._a0(x1, x2)
        if self.kind == "exponential":
            return a0 * np.exp(y)
        r = self.r
        ay = np.abs(y)
        if order == 0:
            return a0 * ay**r * y
        if order == 1:
            return a0 * (r + 1) * ay**r
        # r > 1 here; the limit at y = 0 is 0
        return a0 * (r + 1) * r * ay ** (r - 1) * np.sign(y)


def f_eval(spec: NonlinearitySpec, x, y, order: int = 0):
    x1, x2 = x
    out = spec(x1, x2, y, order)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """Tracking integrand L(x, y) = (y - y_d(x))^2 / 2 with Tikhonov weight nu.

    ``target`` is a number, an expression/callable of (x1, x2) or a nodal array
    on the problem grid (interior-length arrays get zero boundary values).
    """

    target: Any = 0.0
    nu: float = 1e-2
    kind: str = "tracking"

    def __post_init__(self):
        if self.kind != "tracking":
            raise UsageError(f"unknown objective kind {self.kind!r}")
        if not self.nu > 0:
            raise UsageError(f"nu > 0 required, got {self.nu}")
        if isinstance(self.target, np.ndarray) and not np.all(np.isfinite(self.target)):
            raise UsageError("target contains non-finite values")

    def __call__(self, y, yd, order: int = 0):
        """L and its y-derivatives given target values ``yd`` at the same points."""
        y = np.asarray(y, dtype=float)
        if order == 0:
            return 0.5 * (y - yd) ** 2
        if order == 1:
            return y - yd
        if order == 2:
            return np.ones_like(y + yd)
        raise CapabilityError(f"order {order} not provided")


def L_eval(spec: ObjectiveSpec, x, y, order: int = 0, yd=None):
    if yd is None:
        t = spec.target
        if isinstance(t, np.ndarray):
            raise UsageError("nodal targets need an explicit yd value")
        yd = float(t) if isinstance(t, (int, float)) else coefficient(t)(*x)
    out = spec(y, yd, order)
    return float(out) if np.ndim(out) == 0 else out
