"""Velocity lattice and phase-space grid.

The velocity lattice is cell-centred on the cube [-V, V]^3 with n nodes per
axis, so it contains neither v = 0 nor any grazing velocity n.v = 0 for the
slab normals. Quadrature is the midpoint rule with weight h^3.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .domain import DomainGeometry
from .errors import InvalidParams, LatticeMismatch


@dataclass(frozen=True)
class VelocityLattice:
    n: int = 16
    vmax: float = 6.0

    def __post_init__(self):
        if self.n < 2:
            raise InvalidParams("velocity lattice needs at least 2 nodes per axis")
        if not self.vmax > 0:
            raise InvalidParams("vmax must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.vmax / self.n

    @property
    def lo(self) -> float:
        """Coordinate of the first node."""
        return -self.vmax + 0.5 * self.h

    @property
    def size(self) -> int:
        return self.n ** 3

    @property
    def shape(self) -> tuple:
        return (self.n, self.n, self.n)

    @property
    def cell_volume(self) -> float:
        return self.h ** 3

    @cached_property
    def axis(self) -> np.ndarray:
        return self.lo + self.h * np.arange(self.n)

    @cached_property
    def grids(self) -> tuple:
        X, Y, Z = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        return X, Y, Z

    @cached_property
    def points(self) -> np.ndarray:
        """Node velocities, shape (n^3, 3), row-major in (i, j, k)."""
        X, Y, Z = self.grids
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    @cached_property
    def speed2(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.points, self.points)

    def integrate(self, values, axis: int = -1):
        """Midpoint-rule integral over velocity of a flat (.., n^3) array."""
        return np.sum(values, axis=axis) * self.cell_volume

    def check(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.size and f.shape[-3:] != self.shape:
            raise LatticeMismatch(f"profile shape {f.shape} does not match lattice {self.shape}")
        return f

    def as_flat(self, f) -> np.ndarray:
        f = self.check(f)
        return f.reshape(f.shape[:-3] + (self.size,)) if f.shape[-3:] == self.shape else f

    def as_cube(self, f) -> np.ndarray:
        f = self.check(f)
        return f.reshape(f.shape[:-1] + self.shape) if f.shape[-1] == self.size and f.shape[-3:] != self.shape else f

    def refined(self, factor: float = 1.0, extra: int = 4) -> "VelocityLattice":
        return VelocityLattice(int(round(self.n * factor)) + extra, self.vmax)


@dataclass(frozen=True)
class PhaseGrid:
    """Spatial nodes times the velocity lattice.

    For the slab the spatial nodes are the cell centres of a uniform grid on
    [0, L]; the boundary itself is reached by the characteristic tracer and
    is never a node. For the ball the solver is not used, so only the lattice
    and geometry are carried.
    """

    geometry: DomainGeometry
    lattice: VelocityLattice
    nx: int = 64

    def __post_init__(self):
        if self.nx < 2:
            raise InvalidParams("need at least 2 spatial nodes")

    @property
    def dx(self) -> float:
        return self.geometry.size / self.nx

    @cached_property
    def x(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def shape(self) -> tuple:
        return (self.nx, self.lattice.size)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def integrate_x(self, values, axis: int = 0):
        return np.sum(values, axis=axis) * self.dx

    def integrate(self, values) -> float:
        """Integral over x and v of an (nx, n^3) array."""
        return float(np.sum(values) * self.dx * self.lattice.cell_volume)
