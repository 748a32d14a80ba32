"""Self-consistent electrostatic field: charge density and Neumann Poisson solve.

Slab: cell-centred finite differences on [0, L] with ghost-node Neumann
closure. The tridiagonal system is solved through its flux form: the face
gradient equals minus the running integral of the mean-free source, which
is the exact solution of the discrete system. Ball: the same construction
in the radial variable for radially symmetric sources.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import DomainGeometry
from .errors import SolverDivergence
from .lattice import PhaseGrid
from .weights import sqrt_maxwellian

POISSON_TOL = 1e-10


@dataclass(frozen=True)
class PotentialField:
    """phi at cell centres, its gradient at centres and at cell faces.

    ``face_grad`` has nx + 1 entries including the two boundary faces, where
    the Neumann condition makes it zero. ``projection`` is the mean removed
    from the source to make the Neumann problem solvable.
    """

    x: np.ndarray
    phi: np.ndarray
    grad: np.ndarray
    face_grad: np.ndarray
    projection: float
    residual: float
    mean_pinned: bool = True

    @property
    def grad_phi(self) -> np.ndarray:
        """Gradient as (nx, 3) vectors; the slab field points along e1."""
        out = np.zeros((self.grad.size, 3))
        out[:, 0] = self.grad
        return out

    @property
    def electric(self) -> np.ndarray:
        return -self.grad

    def sup_grad(self) -> float:
        return float(np.max(np.abs(self.face_grad))) if self.face_grad.size else 0.0

    def sup_hessian(self) -> float:
        if self.x.size < 2:
            return 0.0
        dx = self.x[1] - self.x[0]
        return float(np.max(np.abs(np.diff(self.face_grad)) / dx))

    def energy(self) -> float:
        """int |grad phi|^2 dx from the face gradients."""
        if self.x.size < 2:
            return 0.0
        dx = self.x[1] - self.x[0]
        return float(np.sum(self.face_grad ** 2) * dx)

    @classmethod
    def zero(cls, x) -> "PotentialField":
        x = np.asarray(x, dtype=float)
        return cls(x, np.zeros_like(x), np.zeros_like(x), np.zeros(x.size + 1), 0.0, 0.0)


def charge_density(f, grid: PhaseGrid) -> np.ndarray:
    """rho~(x) = int sqrt(mu) f dv for f of shape (nx, N)."""
    sq = sqrt_maxwellian(grid.lattice.points)
    return grid.lattice.integrate(np.asarray(f) * sq)


def current(f, grid: PhaseGrid) -> np.ndarray:
    """j~(x) = int v sqrt(mu) f dv, shape (nx, 3)."""
    L = grid.lattice
    sq = sqrt_maxwellian(L.points)
    return (np.asarray(f) * sq) @ L.points * L.cell_volume


def _laplacian_residual(phi, source, dx):
    ghost = np.concatenate([[phi[0]], phi, [phi[-1]]])
    lap = (ghost[2:] - 2.0 * ghost[1:-1] + ghost[:-2]) / (dx * dx)
    return float(np.max(np.abs(-lap - source))) if source.size else 0.0


def solve_poisson_slab(source, length: float) -> PotentialField:
    """-phi'' = source on (0, L), phi'(0) = phi'(L) = 0, mean(phi) = 0."""
    s = np.asarray(source, dtype=float)
    nx = s.size
    dx = length / nx
    x = (np.arange(nx) + 0.5) * dx
    mean = float(np.mean(s)) if nx else 0.0
    s0 = s - mean
    face = np.zeros(nx + 1)
    face[1:] = -np.cumsum(s0) * dx
    face[-1] = 0.0
    phi = np.concatenate([[0.0], np.cumsum(face[1:-1] * dx)])
    phi -= phi.mean()
    grad = 0.5 * (face[:-1] + face[1:])
    scale = max(1.0, float(np.max(np.abs(s0)))) if nx else 1.0
    res = _laplacian_residual(phi, s0, dx) if nx > 1 else 0.0
    if not np.isfinite(res) or res > POISSON_TOL * scale * max(1.0, nx * nx * 1e-6):
        raise SolverDivergence(f"Poisson residual {res:.3e}")
    return PotentialField(x, phi, grad, face, mean, res)


def solve_poisson_ball(source, radius: float) -> PotentialField:
    """Radially symmetric -Laplace(phi) = source in |x| < R, d_r phi(R) = 0.

    ``source`` holds values at the radial cell centres; ``x`` in the result
    is the radial coordinate and the gradient is the radial derivative.
    """
    s = np.asarray(source, dtype=float)
    nr = s.size
    dr = radius / nr
    r = (np.arange(nr) + 0.5) * dr
    faces = np.arange(nr + 1) * dr
    vol = (faces[1:] ** 3 - faces[:-1] ** 3) / 3.0
    mean = float(np.sum(s * vol) / np.sum(vol))
    s0 = s - mean
    # r^2 phi'(r) = -int_0^r s r^2 dr at faces
    enclosed = np.concatenate([[0.0], np.cumsum(s0 * vol)])
    face = np.zeros(nr + 1)
    face[1:] = -enclosed[1:] / faces[1:] ** 2
    face[-1] = 0.0
    phi = np.concatenate([[0.0], np.cumsum(face[1:-1] * dr)])
    phi -= np.sum(phi * vol) / np.sum(vol)
    grad = 0.5 * (face[:-1] + face[1:])
    # discrete residual of the flux form
    div = (faces[1:] ** 2 * face[1:] - faces[:-1] ** 2 * face[:-1]) / vol
    res = float(np.max(np.abs(-div - s0))) if nr else 0.0
    if not np.isfinite(res) or res > POISSON_TOL * max(1.0, float(np.max(np.abs(s0)))):
        raise SolverDivergence(f"Poisson residual {res:.3e}")
    return PotentialField(r, phi, grad, face, mean, res)


def solve_poisson(source, geometry: DomainGeometry) -> PotentialField:
    """Neumann Poisson solve with mean projection of the source and mean-zero phi."""
    if geometry.is_slab:
        return solve_poisson_slab(source, geometry.size)
    return solve_poisson_ball(source, geometry.size)


def field_energy_residual(energy, power, dt) -> np.ndarray:
    """Per-step residual of d/dt int|grad phi|^2 + 2 int E.j = 0.

    ``energy[n]`` is int |grad phi|^2 at step n and ``power[n]`` is
    int E.j at step n; the residual uses the forward difference with the
    left-endpoint power, so it is first order in dt.
    """
    energy = np.asarray(energy, dtype=float)
    power = np.asarray(power, dtype=float)
    if energy.size < 2:
        return np.zeros(0)
    return np.diff(energy) / dt + 2.0 * power[:-1]


def field_power(field: PotentialField, f, grid: PhaseGrid) -> float:
    """int E.j dx with the face field and face-averaged current (slab)."""
    j = current(f, grid)[:, 0]
    jf = np.zeros(j.size + 1)
    jf[1:-1] = 0.5 * (j[:-1] + j[1:])
    return float(np.sum(-field.face_grad * jf) * grid.dx)
