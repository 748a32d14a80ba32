"""Lattice collision operators: Q, Gamma, nu, K_1, K_2 and the projection P.

Post-collision values are obtained by trilinear interpolation of a ratio
R = F/M, never of F itself. For any Maxwellian M, F(u')F(v') =
M(u)M(v) R(u')R(v'), so Q of a Maxwellian is reproduced up to hull
truncation. The absolute form takes M with the moments of its argument;
the perturbative form uses M = mu with R = f/sqrt(mu).

Pair sums omit the coincident pair u = v. The same punctured sum appears in
every term (gain, loss, nu, K_1, K_2), so the singular |u-v|^gamma is handled
consistently rather than accurately, and the (1 - chi) part below the
lattice spacing is accounted for by the certified bounds in ``kernel``.

Interpolation does not conserve moments exactly. The ``conservative`` paths
restore the collision invariants: an exponential moment tilt of the gain for
the absolute form (which keeps the gain nonnegative), and the orthogonal
projection I - P for the perturbative form.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.signal import fftconvolve

from ..lattice import VelocityLattice
from ..weights import maxwellian, sqrt_maxwellian
from . import _numba
from .params import CollisionParams, chi, sphere_rule

# relative size below which whole collision-energy shells are skipped
GAIN_CUTOFF = 1e-18


def hydrodynamic_basis(lattice: VelocityLattice) -> np.ndarray:
    """Orthonormal (N, 5) basis of span{sqrt(mu), v sqrt(mu), |v|^2 sqrt(mu)}.

    Orthonormal for the lattice inner product sum(f g) h^3 (Gram-Schmidt via QR).
    """
    V = lattice.points
    sq = sqrt_maxwellian(V)
    raw = np.column_stack([sq, V[:, 0] * sq, V[:, 1] * sq, V[:, 2] * sq, lattice.speed2 * sq])
    q, _ = np.linalg.qr(raw * np.sqrt(lattice.cell_volume))
    return q / np.sqrt(lattice.cell_volume)


def project(f, basis: np.ndarray, cell_volume: float) -> np.ndarray:
    """P f along the last axis, for flat (..., N) profiles."""
    coef = (f @ basis) * cell_volume
    return coef @ basis.T


def moment_matrix(lattice: VelocityLattice) -> np.ndarray:
    """Columns 1, v1, v2, v3, |v|^2 at the lattice nodes, shape (N, 5)."""
    V = lattice.points
    return np.column_stack([np.ones(lattice.size), V, lattice.speed2])


@dataclass
class QParts:
    """Gain and loss of an absolute-form collision term, kept separately.

    ``raw_gain`` is the gain before the conservation tilt (equal to
    ``gain`` when no tilt was applied).
    """

    gain: np.ndarray
    loss: np.ndarray
    raw_gain: np.ndarray | None = None

    def __post_init__(self):
        if self.raw_gain is None:
            self.raw_gain = self.gain

    @property
    def total(self) -> np.ndarray:
        return self.gain - self.loss


class CollisionOperator:
    """Collision operators on one velocity lattice; profiles are (n, n, n) cubes
    or flat (n^3,) arrays, returned in the same layout."""

    def __init__(self, lattice: VelocityLattice, params: CollisionParams | None = None):
        self.lattice = lattice
        self.params = CollisionParams() if params is None else params
        sig, sw = sphere_rule(self.params.sphere_nodes)
        self._sig = np.ascontiguousarray(sig, dtype=float)
        self._sw = np.ascontiguousarray(sw, dtype=float)
        n, h = lattice.n, lattice.h
        k = np.arange(3 * (n - 1) ** 2 + 1)
        g = np.sqrt(k) * h
        with np.errstate(divide="ignore"):
            powt = self.params.b0_cap * np.where(k > 0, g ** self.params.gamma, 0.0) \
                * chi(g, self.params.chi_epsilon) * h ** 3
        self.powt = np.ascontiguousarray(powt)
        d = np.arange(-(n - 1), n)
        D = d[:, None, None] ** 2 + d[None, :, None] ** 2 + d[None, None, :] ** 2
        self._conv = self.powt[D]
        X, Y, Z = lattice.grids
        s2 = X * X + Y * Y + Z * Z
        self.mu = np.ascontiguousarray(maxwellian(s2 ** 0.5))
        self.sqmu = np.ascontiguousarray(sqrt_maxwellian(s2 ** 0.5))
        self._ones = np.ones(lattice.shape)

    # ------------------------------------------------------------ layout
    def _cube(self, f):
        f = self.lattice.check(f)
        flat = f.shape[-1] == self.lattice.size and f.shape[-3:] != self.lattice.shape
        return (f.reshape(f.shape[:-1] + self.lattice.shape) if flat else f), flat

    def _out(self, x, flat):
        return x.reshape(x.shape[:-3] + (self.lattice.size,)) if flat else x

    # ------------------------------------------------------------ sums
    def pair_sum(self, F):
        """sum_{u != v} |u-v|^gamma b0-cap chi h^3 F(u), by FFT convolution."""
        F, flat = self._cube(F)
        n = self.lattice.n
        ker = self._conv.reshape((1,) * (F.ndim - 3) + self._conv.shape)
        full = fftconvolve(F, ker, mode="full", axes=(-3, -2, -1))
        out = full[..., n - 1:2 * n - 1, n - 1:2 * n - 1, n - 1:2 * n - 1]
        return self._out(out, flat)

    def pair_sum_direct(self, F):
        """Direct O(N^2) version of pair_sum (oracle)."""
        F, flat = self._cube(F)
        return self._out(_numba.pair_sum(np.ascontiguousarray(F), self.powt, self.lattice.n), flat)

    def nu_functional(self, F):
        """nu(F)(v) = int |v-u|^gamma b0 F(u) du dw on the lattice."""
        return 2.0 * np.pi * self.pair_sum(F)

    @cached_property
    def nu(self) -> np.ndarray:
        """Lattice collision frequency nu(mu), flat (N,)."""
        return self.nu_functional(self.mu).ravel()

    def _gain(self, R1, R2, W, same, decay=0.0, scale=1.0, centre=None):
        """Gather with an optional energy cutoff.

        ``decay`` is a such that the pair weight is at most exp(-a E) with
        E = |u-centre|^2 + |v-centre|^2; classes whose bound falls below
        GAIN_CUTOFF times ``scale`` are skipped. decay = 0 disables it.
        """
        L = self.lattice
        emax = np.inf
        if decay > 0.0 and scale > 0.0:
            bound = float(np.max(np.abs(R1)) * np.max(np.abs(R2)))
            if bound > 0.0:
                emax = max(np.log(bound / (GAIN_CUTOFF * scale)) / decay, 0.0)
        m0 = np.zeros(3) if centre is None else np.asarray(centre, dtype=float)
        return _numba.gain_sum(np.ascontiguousarray(R1, dtype=float), np.ascontiguousarray(R2, dtype=float),
                               np.ascontiguousarray(W), L.lo, L.h, L.n, self._sig, self._sw, self.powt,
                               same, emax, m0)

    def reference_maxwellian(self, F):
        """Unnormalised Maxwellian exp(-|v-m|^2/2T) with the moments of F.

        The temperature is measured relative to the lattice temperature of
        mu itself, so that F = mu returns exactly mu despite truncation.
        Falls back to mu when F carries no usable mass or temperature.
        """
        mom = self._moments(F)
        if mom is None:
            return self.mu, np.zeros(3), 1.0
        m, T = mom
        T = T / self._mu_temperature
        if not 0.05 < T < 50.0:
            return self.mu, np.zeros(3), 1.0
        P = self.lattice.points
        e = -np.sum((P - m) ** 2, axis=1) / (2.0 * T)
        return np.exp(np.maximum(e, -700.0)).reshape(self.lattice.shape), m, T

    @cached_property
    def _mu_temperature(self) -> float:
        return self._moments(self.mu)[1]

    def _moments(self, F):
        f = F.reshape(-1)
        P = self.lattice.points
        rho = f.sum()
        if not (rho > 0 and np.all(np.isfinite(f))):
            return None
        m = P.T @ f / rho
        return m, float(np.sum((P - m) ** 2, axis=1) @ f / rho / 3.0)

    # ------------------------------------------------------------ absolute form
    def q_gain(self, F1, F2, conservative: bool = True):
        return self.q_full(F1, F2, conservative).gain

    def q_loss(self, F1, F2):
        """Q_loss(F1, F2) = F2 nu(F1)."""
        F1, flat = self._cube(F1)
        F2, _ = self._cube(F2)
        return self._out(F2 * self.nu_functional(F1), flat)

    def q_full(self, F1, F2, conservative: bool = True) -> QParts:
        """Absolute-form Q(F1, F2) with gain and loss separate.

        With ``conservative`` the gain is tilted by exp(lambda . psi) so that
        the collision invariants of gain - loss vanish: all five when F1 is
        F2, mass only otherwise (only mass is conserved by Q(F1, F2)).
        """
        F1c, flat = self._cube(F1)
        F2c, _ = self._cube(F2)
        same = F1c is F2c or np.array_equal(F1c, F2c)
        # any Maxwellian M satisfies M(u')M(v') = M(u)M(v); taking it close to
        # F makes F/M nearly affine, which trilinear interpolation reproduces
        M, m, T = self.reference_maxwellian(0.5 * (F1c + F2c))
        scale = float(np.max(np.abs(F1c)) * np.max(np.abs(F2c)))
        gain = M * self._gain(F1c / M, F2c / M, M, same, 0.5 / T, scale, m)
        loss = F2c * self.nu_functional(F1c)
        raw = gain
        if conservative:
            gain = self._tilt(gain, loss, 5 if same else 1)
        return QParts(self._out(gain, flat), self._out(loss, flat), self._out(raw, flat))

    @cached_property
    def _psi_scaled(self) -> np.ndarray:
        V = self.lattice.vmax
        M = moment_matrix(self.lattice)
        return M / np.array([1.0, V, V, V, V * V])

    def _tilt(self, gain, loss, k):
        g = gain.ravel()
        ell = loss.ravel()
        psi = self._psi_scaled[:, :k]
        target = psi.T @ ell
        scale = np.abs(psi).T @ np.abs(g) + np.abs(target) + 1e-300
        lam = np.zeros(k)
        for _ in range(50):
            ge = g * np.exp(np.clip(psi @ lam, -700.0, 700.0))
            res = psi.T @ ge - target
            if np.all(np.abs(res) <= 1e-14 * scale):
                break
            J = (psi * ge[:, None]).T @ psi
            try:
                step = np.linalg.solve(J, -res)
            except np.linalg.LinAlgError:
                return gain
            # damp large steps so the tilt stays a small correction
            big = np.max(np.abs(step))
            lam = lam + (step if big < 1.0 else step / big)
            if big < 1e-15:
                break
        return (g * np.exp(psi @ lam)).reshape(gain.shape)

    # ------------------------------------------------------------ perturbative form
    def apply_gamma(self, f1, f2, project_out: bool = True):
        """Gamma(f1, f2) = Q(sqrt(mu) f1, sqrt(mu) f2)/sqrt(mu), gain minus loss.

        Accepts a single profile or a batch (..., N) / (..., n, n, n). With
        ``project_out`` the invariant component of the conservation defect
        is removed (five moments if f1 is f2, mass otherwise).
        """
        f1c, flat = self._cube(f1)
        f2c, _ = self._cube(f2)
        if f1c.ndim > 3:
            b1 = f1c.reshape((-1,) + self.lattice.shape)
            b2 = f2c.reshape((-1,) + self.lattice.shape)
            out = np.stack([self._gamma_one(a, b, project_out) for a, b in zip(b1, b2)])
            return self._out(out.reshape(f1c.shape), flat)
        return self._out(self._gamma_one(f1c, f2c, project_out), flat)

    def _gamma_one(self, f1, f2, project_out):
        same = f1 is f2 or np.array_equal(f1, f2)
        if not (np.any(f1) and np.any(f2)):
            return np.zeros(self.lattice.shape)
        scale = float(np.max(np.abs(f1)) * np.max(np.abs(f2)))
        gain = self.sqmu * self._gain(f1 / self.sqmu, f2 / self.sqmu, self.mu, same, 0.25, scale)
        loss = f2 * self.nu_functional(self.sqmu * f1)
        out = gain - loss
        if project_out:
            B = self.basis if same else self.basis[:, :1]
            out = out - project(out.ravel(), B, self.lattice.cell_volume).reshape(out.shape)
        return out

    @cached_property
    def basis(self) -> np.ndarray:
        return hydrodynamic_basis(self.lattice)

    def apply_K1(self, f):
        """K_1 f = sqrt(mu(v)) nu-type sum of sqrt(mu) f."""
        fc, flat = self._cube(f)
        return self._out(2.0 * np.pi * self.sqmu * self.pair_sum(self.sqmu * fc), flat)

    def apply_K2(self, f):
        """K_2 f = Gamma_gain(sqrt(mu), f) + Gamma_gain(f, sqrt(mu)), matrix-free.

        The two terms coincide because the sphere rule is antipodally
        symmetric, so one gather is evaluated and doubled.
        """
        fc, flat = self._cube(f)
        if fc.ndim > 3:
            b = fc.reshape((-1,) + self.lattice.shape)
            out = np.stack([self._k2_one(x) for x in b]).reshape(fc.shape)
            return self._out(out, flat)
        return self._out(self._k2_one(fc), flat)

    def _k2_one(self, f):
        scale = float(np.max(np.abs(f)))
        return 2.0 * self.sqmu * self._gain(self._ones, f / self.sqmu, self.mu, False, 0.25, scale)

    def apply_K(self, f, table=None):
        """K f = K_2 f - K_1 f, from a KernelTable when given, else matrix-free."""
        if table is not None:
            table.check_lattice(self.lattice)
            fc, flat = self._cube(f)
            x = fc.reshape(fc.shape[:-3] + (self.lattice.size,))
            y = table.apply(x)
            return y if flat else y.reshape(fc.shape)
        return self.apply_K2(f) - self.apply_K1(f)

    def apply_L(self, f, table=None):
        fc, flat = self._cube(f)
        nu = self.nu.reshape(self.lattice.shape)
        out = nu * fc - self._cube(self.apply_K(fc, table))[0]
        return self._out(out, flat)

    def k1_matrix(self) -> np.ndarray:
        """Dense K_1, rows v and columns u."""
        N = self.lattice.size
        idx = np.indices(self.lattice.shape).reshape(3, N).T
        sq = self.sqmu.ravel()
        out = np.empty((N, N))
        for i in range(N):
            r2 = np.sum((idx - idx[i]) ** 2, axis=1)
            out[i] = 2.0 * np.pi * sq[i] * self.powt[r2] * sq
        return out

    def k2_matrix(self) -> np.ndarray:
        L = self.lattice
        return _numba.k2_matrix(L.lo, L.h, L.n, self._sig, self._sw, self.powt,
                                self.mu.ravel().copy(), self.sqmu.ravel().copy())

    def conservative_K(self, k1: np.ndarray, k2: np.ndarray) -> np.ndarray:
        """Dense K_c with nu - K_c = (I - P)(nu - K)(I - P).

        The resulting linearised operator annihilates the five invariants
        exactly and its range is orthogonal to them.
        """
        h3 = self.lattice.cell_volume
        B = self.basis
        M = np.diag(self.nu) - (k2 - k1)
        MB = M @ B
        BtM = (B.T @ M) * h3
        M = M - MB @ (B.T * h3) - B @ BtM + B @ ((B.T @ MB) * h3) @ (B.T * h3)
        return np.diag(self.nu) - M
