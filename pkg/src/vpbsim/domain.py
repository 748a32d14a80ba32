"""Spatial domain geometry: slab and ball, normals and boundary classification.

The slab is the region 0 < x_1 < L, unbounded and homogeneous in x_2 and x_3,
so positions may be passed either as scalars (the x_1 coordinate) or as
3-vectors. The ball is centred at the origin.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.integrate import lebedev_rule

from .errors import InvalidParams, NotOnBoundary

GRAZING_TOL = 1e-10


class DomainKind(str, enum.Enum):
    SLAB = "slab"
    BALL = "ball"


class Classification(str, enum.Enum):
    INCOMING = "incoming"
    OUTGOING = "outgoing"
    GRAZING = "grazing"


@dataclass(frozen=True)
class DomainGeometry:
    """A bounded convex domain: slab [0, size] or ball of radius ``size``."""

    kind: DomainKind
    size: float

    def __post_init__(self):
        object.__setattr__(self, "kind", DomainKind(self.kind))
        if not (np.isfinite(self.size) and self.size > 0):
            raise InvalidParams(f"domain size must be positive, got {self.size}")

    @classmethod
    def slab(cls, length: float = 1.0) -> "DomainGeometry":
        return cls(DomainKind.SLAB, float(length))

    @classmethod
    def ball(cls, radius: float = 1.0) -> "DomainGeometry":
        return cls(DomainKind.BALL, float(radius))

    @property
    def is_slab(self) -> bool:
        return self.kind is DomainKind.SLAB

    @property
    def convexity_constant(self) -> float:
        # flat faces carry no curvature, so the slab is convex but not strictly
        return 0.0 if self.is_slab else 1.0 / self.size

    @property
    def diameter(self) -> float:
        return self.size if self.is_slab else 2.0 * self.size

    @property
    def boundary_tol(self) -> float:
        return 1e-12 * self.diameter

    @property
    def space_dim(self) -> int:
        """Number of spatial coordinates the solver resolves."""
        return 1 if self.is_slab else 3


def _coord(geometry: DomainGeometry, x):
    x = np.asarray(x, dtype=float)
    if geometry.is_slab:
        return x[..., 0] if (x.ndim >= 1 and x.shape[-1] == 3) else x
    if x.shape[-1] != 3:
        raise ValueError("ball positions must be 3-vectors")
    return x


def signed_distance(geometry: DomainGeometry, x):
    """Negative inside, zero on the boundary, positive outside."""
    xc = _coord(geometry, x)
    if geometry.is_slab:
        d = -np.minimum(xc, geometry.size - xc)
    else:
        d = np.linalg.norm(xc, axis=-1) - geometry.size
    return float(d) if np.ndim(d) == 0 else d


def _check_on_boundary(geometry, x, tol):
    tol = geometry.boundary_tol if tol is None else tol
    d = signed_distance(geometry, x)
    if np.any(np.abs(d) > tol):
        raise NotOnBoundary(f"signed distance {np.max(np.abs(d)):.3e} exceeds {tol:.3e}")


def normal(geometry: DomainGeometry, x, tol: float | None = None) -> np.ndarray:
    """Outward unit normal at a boundary point."""
    _check_on_boundary(geometry, x, tol)
    xc = _coord(geometry, x)
    if geometry.is_slab:
        xc = np.asarray(xc, dtype=float)
        n = np.zeros(xc.shape + (3,))
        n[..., 0] = np.where(xc < 0.5 * geometry.size, -1.0, 1.0)
        return n
    return xc / np.linalg.norm(xc, axis=-1, keepdims=True)


def classify_boundary(geometry: DomainGeometry, x, v, grazing_tol: float = GRAZING_TOL,
                      tol: float | None = None) -> Classification:
    """Incoming, outgoing or grazing according to the sign of n(x).v."""
    nv = float(np.dot(normal(geometry, x, tol), np.asarray(v, dtype=float)))
    if abs(nv) < grazing_tol:
        return Classification.GRAZING
    return Classification.INCOMING if nv < 0 else Classification.OUTGOING


@dataclass(frozen=True)
class BoundaryPoint:
    x: np.ndarray
    v: np.ndarray
    classification: Classification

    @classmethod
    def at(cls, geometry: DomainGeometry, x, v, grazing_tol: float = GRAZING_TOL):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        return cls(x, v, classify_boundary(geometry, x, v, grazing_tol))


def tangent_basis(geometry: DomainGeometry, x) -> np.ndarray:
    """Two orthonormal tangent vectors at a boundary point, as rows."""
    n = normal(geometry, x)
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = a - np.dot(a, n) * n
    e1 /= np.linalg.norm(e1)
    return np.stack([e1, np.cross(n, e1)])


def chart(geometry: DomainGeometry, p, xpar) -> np.ndarray:
    """Local boundary chart eta_p around p, graph over the tangent plane."""
    p = np.asarray(p, dtype=float)
    if geometry.is_slab:
        p3 = np.array([float(_coord(geometry, p)), 0.0, 0.0]) if np.ndim(p) == 0 or p.shape != (3,) else p
        return p3 + np.array([0.0, xpar[0], xpar[1]])
    e = tangent_basis(geometry, p)
    n = p / np.linalg.norm(p)
    R = geometry.size
    s2 = xpar[0] ** 2 + xpar[1] ** 2
    return xpar[0] * e[0] + xpar[1] * e[1] + np.sqrt(R * R - s2) * n


def second_fundamental_form(geometry: DomainGeometry, p, zeta, step: float = 1e-3) -> float:
    """sum_ij zeta_i zeta_j d_i d_j eta_p(0) . n(p), by central differences."""
    zeta = np.asarray(zeta, dtype=float)
    h = step * geometry.diameter
    n = normal(geometry, np.array([float(_coord(geometry, p)), 0.0, 0.0])
               if geometry.is_slab else p)
    z = np.zeros(2)
    # directional second derivative along zeta equals zeta^T Hess zeta
    fp = chart(geometry, p, z + h * zeta)
    f0 = chart(geometry, p, z)
    fm = chart(geometry, p, z - h * zeta)
    return float(np.dot((fp - 2.0 * f0 + fm) / (h * h), n))


def boundary_nodes(geometry: DomainGeometry, order: int = 15):
    """Boundary quadrature: (points, outward normals, area weights).

    The slab returns its two faces with unit area weight per transverse area.
    The ball uses a Lebedev rule scaled to the sphere of radius R.
    """
    if geometry.is_slab:
        pts = np.array([[0.0, 0.0, 0.0], [geometry.size, 0.0, 0.0]])
        nrm = np.array([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        return pts, nrm, np.ones(2)
    x, w = lebedev_rule(order)
    x = x.T
    R = geometry.size
    return R * x, x.copy(), w * R * R
