"""Midpoint-rule grid calculus on [0,1] and [0,1]^2.

All continuum fields (densities, kernels, test functions) are represented by
their values at the m midpoint nodes u_i = (i - 1/2)/m.  Every integral is
the midpoint quadrature sum (1/m) * sum(values); the rule is second-order
accurate and integrates the constant 1 to exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "midpoint_nodes",
    "GridFunction",
    "GridBiFunction",
    "NumericalError",
]


class NumericalError(RuntimeError):
    """Non-finite values encountered during numerical evolution."""


def midpoint_nodes(m: int) -> np.ndarray:
    if m < 1:
        raise ValueError(f"grid needs at least one node, got m={m}")
    return (np.arange(m) + 0.5) / m


@dataclass(frozen=True)
class GridFunction:
    """A function on [0,1] sampled at the m midpoint nodes."""

    m: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.m,):
            raise ValueError(
                f"expected {self.m} values, got shape {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @property
    def nodes(self) -> np.ndarray:
        return midpoint_nodes(self.m)

    @classmethod
    def from_callable(cls, fn: Callable, m: int) -> "GridFunction":
        nodes = midpoint_nodes(m)
        values = np.asarray(fn(nodes), dtype=float)
        if values.shape != nodes.shape:
            values = np.broadcast_to(values, nodes.shape).copy()
        return cls(m, values)

    @classmethod
    def constant(cls, value: float, m: int) -> "GridFunction":
        return cls(m, np.full(m, float(value)))

    def integral(self) -> float:
        """Midpoint quadrature of the function over [0,1]."""
        return float(self.values.mean())

    def pair(self, other: "GridFunction") -> float:
        """Quadrature inner product <self, other>."""
        if other.m != self.m:
            raise ValueError("grid size mismatch")
        return float((self.values * other.values).mean())


@dataclass(frozen=True)
class GridBiFunction:
    """A function on [0,1]^2 sampled on the m x m midpoint product grid.

    ``values[i, j]`` is the sample at (u_i, v_j).
    """

    m: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.m, self.m):
            raise ValueError(
                f"expected shape ({self.m}, {self.m}), got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @property
    def nodes(self) -> np.ndarray:
        return midpoint_nodes(self.m)

    @classmethod
    def from_callable(cls, fn: Callable, m: int) -> "GridBiFunction":
        nodes = midpoint_nodes(m)
        values = np.asarray(fn(nodes[:, None], nodes[None, :]), dtype=float)
        if values.shape != (m, m):
            values = np.broadcast_to(values, (m, m)).copy()
        return cls(m, values)

    def integral(self) -> float:
        """Midpoint quadrature over the unit square."""
        return float(self.values.mean())


def require_finite(array: np.ndarray, context: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericalError(f"non-finite values in {context}")
