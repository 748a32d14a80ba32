"""Time integration of the perturbed VPB system on the slab.

One step freezes the field from Poisson at t_n, traces every (x_i, v_1)
node back over dt and applies the mild form of the weighted equation for
h = w f:

    h(t+dt) = exp(-nu~ dt) h(t, foot) + phi_1(nu~, dt) S(t, foot)

with phi_1(a, s) = (1 - exp(-a s)) / a and S = w (K_c f + Gamma(f, f)
- v.grad(phi) sqrt(mu)). Characteristics that leave the slab within dt take
the in-flow datum at the exit point instead, attenuated over t_b. The
absolute form replaces the source by the Picard pair: gain from the
previous iterate, loss frequency implicit.

The slab is homogeneous in x_2, x_3 and the field points along e_1, so
characteristics live in (x, v_1) and the foot lookup is bilinear in those
two variables, applied to all (v_2, v_3) columns at once.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import struct
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable

import numpy as np

from . import diagnostics as diag
from .collision import CollisionOperator, CollisionParams, KernelTable, load_or_build
from .collision.operators import moment_matrix, project
from .collision.kernel import gamma_bound_constant, k_singular_bound
from .errors import (CFLWarning, CompatibilityViolated, IntegratorFailure, InvalidParams,
                     NonPositiveInput, ParseError, SmallnessViolated)
from .field import PotentialField, charge_density, current, field_power, solve_poisson
from .kinematics import trace_slab_batch
from .lattice import PhaseGrid
from .weights import WeightParams, maxwellian, nu_tilde, sqrt_maxwellian, weight

log = logging.getLogger(__name__)

HISTORY_COLUMNS = [
    "t", "sup_w", "lp_w", "l2", "boundary_plus", "alpha_deriv_lp", "l3_l1delta",
    "grad_phi_sup", "hess_phi_sup", "mass_residual", "energy_identity_residual",
]
EXTRA_COLUMNS = [
    "field_energy", "field_power", "charge_projection", "flux_residual",
    "gamma_bound", "gamma_evaluated", "k_singular_bound", "min_F", "max_F", "picard_iters",
]


class Representation(str, enum.Enum):
    PERTURBATION = "perturbation"
    ABSOLUTE = "absolute"


@dataclass
class DistributionField:
    """f (or F) on the phase grid at one time, shape (nx, N)."""

    values: np.ndarray
    time: float
    grid: PhaseGrid
    representation: Representation = Representation.PERTURBATION

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.representation = Representation(self.representation)
        if self.values.shape != self.grid.shape:
            raise InvalidParams(f"values shape {self.values.shape} != grid shape {self.grid.shape}")

    @property
    def is_absolute(self) -> bool:
        return self.representation is Representation.ABSOLUTE

    def _mu(self):
        V = self.grid.lattice.points
        return maxwellian(V), sqrt_maxwellian(V)

    def to_absolute(self) -> "DistributionField":
        if self.is_absolute:
            return self
        mu, sq = self._mu()
        return DistributionField(mu + sq * self.values, self.time, self.grid, Representation.ABSOLUTE)

    def to_perturbation(self) -> "DistributionField":
        if not self.is_absolute:
            return self
        mu, sq = self._mu()
        return DistributionField((self.values - mu) / sq, self.time, self.grid)

    def perturbation(self) -> np.ndarray:
        return self.to_perturbation().values

    @classmethod
    def zeros(cls, grid: PhaseGrid, time: float = 0.0) -> "DistributionField":
        return cls(grid.zeros(), time, grid)


# ---------------------------------------------------------------- boundary

Profile = Callable[[float, int, np.ndarray], np.ndarray]


@dataclass
class BoundaryDatum:
    """In-flow datum g(t, face, v) for the perturbation on gamma_-.

    ``face`` is 0 for x = 0 and 1 for x = L. With ``flux_compatible`` the
    datum is a(t) sqrt(mu) on each face, a chosen every step so that the
    incoming flux balances the outgoing flux of the current solution; the
    profile is then ignored.
    """

    profile: Profile | None = None
    decay_rate: float = 0.0
    amplitude: float = 0.0
    flux_compatible: bool = False
    _coef: np.ndarray = dc_field(default_factory=lambda: np.zeros(2), repr=False)

    def __post_init__(self):
        if self.decay_rate < 0:
            raise InvalidParams("decay rate lambda_0 must be nonnegative")

    @classmethod
    def zero(cls) -> "BoundaryDatum":
        return cls()

    @classmethod
    def maxwellian_inflow(cls, amplitude: float, decay_rate: float = 0.0, rho: float = 1.0 / 3.0):
        """g = A exp(-lambda_0 t^rho) sqrt(mu)."""
        def g(t, face, v):
            return amplitude * np.exp(-decay_rate * max(t, 0.0) ** rho) * sqrt_maxwellian(v)
        return cls(g, decay_rate, amplitude)

    @classmethod
    def compatible(cls) -> "BoundaryDatum":
        return cls(flux_compatible=True)

    @property
    def is_zero(self) -> bool:
        return self.profile is None and not self.flux_compatible

    def set_flux_coefficients(self, coef):
        self._coef = np.asarray(coef, dtype=float).copy()

    def __call__(self, t: float, face: int, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.flux_compatible:
            return self._coef[face] * sqrt_maxwellian(v)
        if self.profile is None:
            return np.zeros(v.shape[:-1])
        return np.asarray(self.profile(t, face, v), dtype=float) * np.ones(v.shape[:-1])

    def weighted_size(self, times, weights: WeightParams, lattice, rho: float) -> float:
        """sup_s exp(lambda_0 s^rho) ||w g(s)||_inf over the incoming lattice nodes."""
        V = lattice.points
        out = 0.0
        for s in np.atleast_1d(times):
            w = weight(s, V, weights)
            for face, sign in ((0, 1.0), (1, -1.0)):
                inc = sign * V[:, 0] > 0
                val = np.max(np.abs(w[inc] * self(float(s), face, V[inc])), initial=0.0)
                out = max(out, float(np.exp(self.decay_rate * s ** rho) * val))
        return out


def flux_coefficients(f, grid: PhaseGrid) -> np.ndarray:
    """a per face so that a sqrt(mu) carries in the outgoing flux of f."""
    L = grid.lattice
    V = L.points
    sq = sqrt_maxwellian(V)
    mu = sq * sq
    out = np.zeros(2)
    for face, (row, sign) in enumerate(((0, -1.0), (-1, 1.0))):
        nv = sign * V[:, 0]
        outgoing = nv > 0
        flux_out = np.sum(sq[outgoing] * f[row, outgoing] * nv[outgoing])
        unit_in = np.sum(mu[~outgoing] * np.abs(nv[~outgoing]))
        out[face] = flux_out / unit_in
    return out


def boundary_flux_compatibility(f, boundary: BoundaryDatum, grid: PhaseGrid, t: float) -> np.ndarray:
    """Per-face residual int_{n.v>0} sqrt(mu) f |n.v| dv - int_{n.v<0} sqrt(mu) g |n.v| dv.

    ``f`` is the (nx, N) perturbation; its boundary trace is taken from the
    cells next to each face.
    """
    L = grid.lattice
    V = L.points
    sq = sqrt_maxwellian(V)
    f = np.asarray(f, dtype=float)
    res = np.zeros(2)
    for face, (row, sign) in enumerate(((0, -1.0), (-1, 1.0))):
        nv = sign * V[:, 0]
        out = nv > 0
        lhs = np.sum(sq[out] * f[row, out] * nv[out])
        rhs = np.sum(sq[~out] * boundary(t, face, V[~out]) * np.abs(nv[~out]))
        res[face] = (lhs - rhs) * L.cell_volume
    return res


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class SolverConfig:
    dt: float = 0.01
    t_end: float = 1.0
    picard_tol: float = 1e-10
    picard_max_iter: int = 30
    smallness_M: float = 1.0
    delta_star: float = 0.5
    weights: WeightParams = WeightParams()
    poisson: bool = True
    gamma_rel_tol: float = 1e-2
    compat_tol: float = 1e-2
    alpha_eps: float = 0.01
    p: float = 4.0
    beta: float = 0.6
    delta: float = 0.1
    varpi: float = 0.01

    def __post_init__(self):
        for problem in self.violations():
            raise InvalidParams(problem)

    def violations(self) -> list:
        out = []
        if not self.dt > 0:
            out.append("dt>0")
        if not self.picard_tol > 0:
            out.append("picard_tol>0")
        if self.picard_max_iter < 1:
            out.append("picard_max_iter>=1")
        if not self.smallness_M > 0:
            out.append("M>0")
        if not self.delta_star > 0:
            out.append("delta_star>0")
        if not self.t_end >= 0:
            out.append("t_end>=0")
        return out

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class PicardReport:
    increments: list
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.increments)

    def ratios(self) -> np.ndarray:
        d = np.asarray(self.increments, dtype=float)
        return d[1:] / np.where(d[:-1] > 0, d[:-1], np.inf)


def _phi1(a, s):
    """(1 - exp(-a s)) / a, continuous at a = 0."""
    a = np.asarray(a, dtype=float)
    s = np.asarray(s, dtype=float)
    x = a * s
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, a)
    return np.where(small, s * (1.0 - 0.5 * x), -np.expm1(-x) / safe)


# ---------------------------------------------------------------- simulator

class Simulator:
    """Holds the immutable per-run data: operator, tables, frequencies, weights."""

    def __init__(self, grid: PhaseGrid, collision: CollisionParams | None = None,
                 config: SolverConfig | None = None, table: KernelTable | None = None,
                 use_cache: bool = True, build_table: bool = True):
        if not grid.geometry.is_slab:
            raise InvalidParams("the time stepper runs on the slab; the ball is geometry-only")
        self.grid = grid
        self.config = SolverConfig() if config is None else config
        self.op = CollisionOperator(grid.lattice, collision)
        self.params = self.op.params
        L = grid.lattice
        self.V = L.points
        self.v1 = self.V[:, 0]
        self.sq = sqrt_maxwellian(self.V)
        self.mu = self.sq * self.sq
        self.nu = self.op.nu
        self.table = table
        self.Kc = None
        if build_table:
            if self.table is None:
                self.table = load_or_build(L, self.params, self.op, use_cache)
            self.table.check_lattice(L)
            self.Kc = np.ascontiguousarray(self.op.conservative_K(self.table.k1, self.table.k2))
        self._gamma_ratio = float(np.max(gamma_bound_constant(self.V, self.params) / self.nu))
        self._cfl_warned = False

    # ------------------------------------------------------------ pieces
    def field_of(self, f) -> PotentialField:
        if not self.config.poisson:
            return PotentialField.zero(self.grid.x)
        return solve_poisson(charge_density(f, self.grid), self.grid.geometry)

    def apply_Kc(self, f) -> np.ndarray:
        if self.Kc is None:
            return self.op.apply_K(f, self.table)
        return f @ self.Kc.T if np.any(f) else np.zeros_like(f)

    def gamma_bound(self, sup_wf: float) -> float:
        """Certified sup_v |nu^-1 w Gamma(f, f)| from ||w f||_inf."""
        return self._gamma_ratio * sup_wf * sup_wf

    def gamma_needed(self, sup_wf: float) -> bool:
        # Gamma is dropped only while its certified size stays below the
        # tolerance relative to the linear damping nu ||w f||
        return self._gamma_ratio * sup_wf > self.config.gamma_rel_tol

    def trace(self, t_new: float, dt: float, e1):
        g = self.grid
        X, V1 = np.meshgrid(g.x, g.lattice.axis, indexing="ij")
        accel = None
        if e1 is not None and np.any(e1):
            xc, vals = g.x, np.asarray(e1, dtype=float)
            accel = lambda s, x: np.interp(x, xc, vals)  # noqa: E731
        xf, vf, tb, exited = trace_slab_batch(g.geometry.size, X, V1, t_new, dt, accel)
        if not (np.all(np.isfinite(xf)) and np.all(np.isfinite(vf))):
            raise IntegratorFailure("non-finite characteristic foot")
        return xf, vf, tb, exited

    def _ghosts(self, h, boundary: BoundaryDatum, t: float, w):
        """(nx + 2, N) array with face values: in-flow data on gamma_-, copies otherwise."""
        ext = np.empty((h.shape[0] + 2, h.shape[1]))
        ext[1:-1] = h
        ext[0] = h[0]
        ext[-1] = h[-1]
        if boundary is not None and not boundary.is_zero:
            inc0 = self.v1 > 0
            inc1 = self.v1 < 0
            ext[0, inc0] = w[inc0] * boundary(t, 0, self.V[inc0])
            ext[-1, inc1] = w[inc1] * boundary(t, 1, self.V[inc1])
        elif boundary is not None:
            ext[0, self.v1 > 0] = 0.0
            ext[-1, self.v1 < 0] = 0.0
        return ext

    def _lookup(self, arrays, xf, vf):
        """Bilinear (x, v_1) interpolation of (nx + 2, N) arrays at the feet."""
        g = self.grid
        L = g.lattice
        n = L.n
        nodes = np.concatenate([[0.0], g.x, [g.geometry.size]])
        ix = np.clip(np.searchsorted(nodes, xf, side="right") - 1, 0, nodes.size - 2)
        wx = np.clip((xf - nodes[ix]) / (nodes[ix + 1] - nodes[ix]), 0.0, 1.0)
        pos = (vf - L.lo) / L.h
        if (np.any(pos < -0.5) or np.any(pos > n - 0.5)) and not self._cfl_warned:
            warnings.warn("characteristic foot left the velocity lattice hull", CFLWarning)
            self._cfl_warned = True
        pos = np.clip(pos, 0.0, n - 1)
        iv = np.minimum(pos.astype(int), n - 2)
        wv = pos - iv
        iv = np.where(n > 1, iv, 0)
        nx = g.nx
        out = []
        for A in arrays:
            C = A.reshape(nx + 2, n, n * n)
            a00 = C[ix, iv]
            a10 = C[ix + 1, iv]
            a01 = C[ix, iv + 1]
            a11 = C[ix + 1, iv + 1]
            wx_, wv_ = wx[..., None], wv[..., None]
            val = (1 - wx_) * ((1 - wv_) * a00 + wv_ * a01) + wx_ * ((1 - wv_) * a10 + wv_ * a11)
            out.append(val.reshape(nx, L.size))
        return out

    def _expand(self, a):
        """(nx, n) per-(x, v_1) values to (nx, N)."""
        return diag.expand_alpha(a, self.grid.lattice)

    def _exit_values(self, boundary, t_new, tb, xf, vf, exited, weights=None):
        """Datum at the exit points, with v_1 replaced by the exit velocity, (nx, N)."""
        L = self.grid.lattice
        n = L.n
        out = np.zeros(self.grid.shape)
        if boundary is None or boundary.is_zero or not np.any(exited):
            return out
        I, A = np.nonzero(exited)
        base = self.V.reshape(n, n * n, 3)
        for i, a in zip(I, A):
            vb = base[a].copy()
            vb[:, 0] = vf[i, a]
            s = t_new - tb[i, a]
            face = 0 if xf[i, a] < 0.5 * self.grid.geometry.size else 1
            val = boundary(s, face, vb)
            if weights is not None:
                val = weight(s, vb, weights) * val
            out[i].reshape(n, n * n)[a] = val
        return out

    def _check_smallness(self, sup_wf, t):
        if not np.isfinite(sup_wf) or sup_wf > self.config.smallness_M:
            raise SmallnessViolated(f"||w f(t={t:.4g})||_inf = {sup_wf:.4g} exceeds M = {self.config.smallness_M}")

    # ------------------------------------------------------------ perturbation step
    def step(self, f, t: float, boundary: BoundaryDatum, dt: float | None = None,
             field: PotentialField | None = None):
        """One Duhamel step of the perturbation; returns (f_new, info)."""
        cfg = self.config
        dt = cfg.dt if dt is None else dt
        wp = cfg.weights
        f = np.asarray(f, dtype=float)
        field = self.field_of(f) if field is None else field
        e1 = -field.grad
        t_new = t + dt
        w_n = weight(t, self.V, wp)
        w_new = weight(t_new, self.V, wp)
        h = w_n * f
        sup_wf = float(np.max(np.abs(h))) if h.size else 0.0

        if boundary is not None and boundary.flux_compatible:
            boundary.set_flux_coefficients(flux_coefficients(f, self.grid))

        src = self.apply_Kc(f)
        gamma_on = self.gamma_needed(sup_wf)
        if gamma_on:
            src = src + self.op.apply_gamma(f, f)
        if np.any(field.grad):
            src = src - field.grad[:, None] * self.v1[None, :] * self.sq[None, :]
        S = w_n * src

        gp = np.zeros((self.grid.nx, 1, 3))
        gp[:, 0, 0] = field.grad
        nut = nu_tilde(t + 0.5 * dt, self.V[None, :, :], gp, wp, self.nu[None, :])

        if not (np.any(h) or np.any(S)) and (boundary is None or boundary.is_zero):
            return np.zeros_like(f), self._info(field, False, sup_wf, t)

        xf, vf, tb, exited = self.trace(t_new, dt, e1 if np.any(e1) else None)
        H = self._ghosts(h, boundary, t, w_n)
        Sg = self._ghosts(S, None, t, w_n)
        h_foot, S_foot = self._lookup((H, Sg), xf, vf)
        span = self._expand(np.where(exited, tb, dt))
        ex = self._expand(exited.astype(float)) > 0.5
        out = np.exp(-nut * span) * h_foot + _phi1(nut, span) * S_foot
        if np.any(ex):
            hb = self._exit_values(boundary, t_new, tb, xf, vf, exited, wp)
            out = np.where(ex, np.exp(-nut * span) * hb + _phi1(nut, span) * S_foot, out)
        f_new = out / w_new
        if not np.all(np.isfinite(f_new)):
            raise IntegratorFailure("non-finite values after the step")
        return f_new, self._info(field, gamma_on, sup_wf, t)

    def _info(self, field, gamma_on, sup_wf, t):
        return {
            "field": field,
            "gamma_evaluated": bool(gamma_on),
            "gamma_bound": self.gamma_bound(sup_wf),
            "k_singular_bound": float(np.max(k_singular_bound(self.V, t, self.params, self.config.weights))) * sup_wf,
        }

    # ------------------------------------------------------------ absolute step
    def picard_step(self, F, t: float, boundary: BoundaryDatum, dt: float | None = None,
                    field: PotentialField | None = None):
        """One absolute-form step by the Picard iteration; returns (F_new, PicardReport).

        Iterate: F^{l+1} = exp(-nu(F^l) s) F(foot) + phi_1(nu(F^l), s) Q_gain(F^l, F^l),
        s = min(dt, t_b), with F(foot) replaced by the in-flow datum on exit.
        Each term is nonnegative, so F^{l+1} >= 0 whenever F, G >= 0.
        """
        cfg = self.config
        dt = cfg.dt if dt is None else dt
        F = np.asarray(F, dtype=float)
        if np.any(F < 0):
            raise NonPositiveInput(f"min F = {F.min():.3e} < 0")
        if field is None:
            field = self.field_of((F - self.mu) / self.sq)
        e1 = -field.grad
        t_new = t + dt
        G = self._absolute_datum(boundary)
        xf, vf, tb, exited = self.trace(t_new, dt, e1 if np.any(e1) else None)
        ext = np.empty((F.shape[0] + 2, F.shape[1]))
        ext[1:-1] = F
        ext[0] = F[0]
        ext[-1] = F[-1]
        inc0, inc1 = self.v1 > 0, self.v1 < 0
        ext[0, inc0] = G(t, 0, self.V[inc0])
        ext[-1, inc1] = G(t, 1, self.V[inc1])
        (foot,) = self._lookup((ext,), xf, vf)
        span = self._expand(np.where(exited, tb, dt))
        ex = self._expand(exited.astype(float)) > 0.5
        if np.any(ex):
            gb = self._exit_values(_Callable(G), t_new, tb, xf, vf, exited)
            foot = np.where(ex, gb, foot)
        if np.any(foot < 0):
            raise NonPositiveInput("in-flow datum or foot values negative")

        wp = cfg.weights
        w_new = weight(t_new, self.V, wp)
        cur = foot.copy()
        incs = []
        converged = False
        for _ in range(cfg.picard_max_iter):
            nu = np.empty_like(cur)
            gain = np.empty_like(cur)
            for i in range(cur.shape[0]):
                q = self.op.q_full(cur[i], cur[i])
                gain[i] = np.maximum(q.gain, 0.0)
                nu[i] = self.op.nu_functional(cur[i])
            nxt = np.exp(-nu * span) * foot + _phi1(nu, span) * gain
            d = float(np.max(np.abs(w_new * (nxt - cur) / self.sq)))
            incs.append(d)
            cur = nxt
            if d <= cfg.picard_tol:
                converged = True
                break
        return cur, PicardReport(incs, converged)

    def _absolute_datum(self, boundary):
        def G(t, face, v):
            g = np.zeros(v.shape[:-1]) if boundary is None else boundary(t, face, v)
            return maxwellian(v) + sqrt_maxwellian(v) * g
        return G


class _Callable:
    """Wrap a plain datum callable for _exit_values."""

    def __init__(self, fn):
        self.fn = fn
        self.is_zero = False

    def __call__(self, t, face, v):
        return self.fn(t, face, v)


# ---------------------------------------------------------------- module-level API

def duhamel_step(f_n: DistributionField, field: PotentialField | None, boundary: BoundaryDatum,
                 dt: float, sim: Simulator) -> DistributionField:
    """Advance a perturbation field by one step with the given frozen field."""
    f_new, _ = sim.step(f_n.perturbation(), f_n.time, boundary, dt, field)
    return DistributionField(f_new, f_n.time + dt, f_n.grid)


def picard_solve(F_prev: DistributionField, field_prev: PotentialField | None, boundary: BoundaryDatum,
                 dt: float, sim: Simulator):
    """Absolute-form step by Picard iteration; returns (DistributionField, PicardReport)."""
    if not F_prev.is_absolute:
        raise InvalidParams("picard_solve works on the absolute form F")
    F_new, rep = sim.picard_step(F_prev.values, F_prev.time, boundary, dt, field_prev)
    return DistributionField(F_new, F_prev.time + dt, F_prev.grid, Representation.ABSOLUTE), rep


def compatibility_residual(f0, boundary: BoundaryDatum, grid: PhaseGrid, t: float = 0.0) -> float:
    """max |f0 - g(0)| on the incoming nodes of each face, f0 taken at the nearest cell."""
    V = grid.lattice.points
    f0 = np.asarray(f0, dtype=float)
    res = 0.0
    for face, (row, inc) in enumerate(((0, V[:, 0] > 0), (-1, V[:, 0] < 0))):
        g = np.zeros(int(inc.sum())) if boundary is None else boundary(t, face, V[inc])
        res = max(res, float(np.max(np.abs(f0[row, inc] - g), initial=0.0)))
    return res


@dataclass
class RunHistory:
    rows: list
    summary: dict
    final: DistributionField | None = None
    snapshots: list = dc_field(default_factory=list)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def columns(self) -> list:
        return HISTORY_COLUMNS + EXTRA_COLUMNS

    def write_csv(self, path) -> Path:
        import csv
        path = Path(path)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.columns)
            for r in self.rows:
                wr.writerow([_fmt(r[c]) for c in self.columns])
        return path


def _fmt(x) -> str:
    return repr(float(x))


def _mass(f, grid, sq):
    return float(grid.integrate(f * sq))


def run_simulation(initial: DistributionField, boundary: BoundaryDatum | None,
                   config: SolverConfig, params: CollisionParams | None = None,
                   sim: Simulator | None = None, snapshot_every: int = 0) -> RunHistory:
    """Advance to t_end, solving Poisson each step and recording diagnostics.

    Raises CompatibilityViolated when f0 disagrees with g(0) on gamma_- and
    SmallnessViolated when ||w f||_inf leaves the ball of radius M.
    """
    grid = initial.grid
    if sim is None:
        sim = Simulator(grid, params, config)
    cfg = sim.config = config
    boundary = BoundaryDatum.zero() if boundary is None else boundary
    absolute = initial.is_absolute
    f = initial.perturbation().copy()
    t = float(initial.time)
    if boundary.flux_compatible:
        boundary.set_flux_coefficients(flux_coefficients(f, grid))
    w0 = weight(t, grid.lattice.points, cfg.weights)
    scale = max(float(np.max(np.abs(w0 * f))), 1e-300)
    comp = compatibility_residual(w0 * f, _weighted_datum(boundary, cfg.weights), grid, t)
    if comp > cfg.compat_tol * scale and comp > 1e-14:
        raise CompatibilityViolated(f"|f0 - g(0)| on gamma_- is {comp:.3e}")
    rho_exp = cfg.weights.rho
    data = scale + boundary.weighted_size(np.linspace(0.0, max(cfg.t_end, 0.0), 11), cfg.weights,
                                          grid.lattice, rho_exp)
    summary = {
        "rho": rho_exp,
        "data_size": data,
        "delta_star_M": cfg.delta_star * cfg.smallness_M,
        "data_within_delta_star_M": bool(data <= cfg.delta_star * cfg.smallness_M),
        "steps": cfg.n_steps,
        "gamma_ratio": sim._gamma_ratio,
    }
    sq = sim.sq
    rows = []
    snaps = []
    F = initial.to_absolute().values if absolute else None
    field = sim.field_of(f)
    prev = None
    for n in range(cfg.n_steps + 1):
        wf = weight(t, grid.lattice.points, cfg.weights) * f
        sup_wf = float(np.max(np.abs(wf)))
        sim._check_smallness(sup_wf, t)
        rep = diag.norm_report(f, grid, t, cfg.weights, field if cfg.poisson else None, cfg.p, cfg.beta,
                               cfg.delta, cfg.alpha_eps, cfg.varpi)
        energy = field.energy()
        power = field_power(field, f, grid)
        mass = _mass(f, grid, sq)
        jb = current(f[[0, -1]], grid)[:, 0]
        row = {
            "t": t, "sup_w": rep.sup_weighted, "lp_w": rep.lp_weighted, "l2": rep.l2,
            "boundary_plus": rep.boundary_out, "alpha_deriv_lp": rep.alpha_deriv_lp,
            "l3_l1delta": rep.l3_l1delta, "grad_phi_sup": rep.field_sup,
            "hess_phi_sup": rep.field_hess, "mass_residual": 0.0,
            "energy_identity_residual": 0.0, "field_energy": energy, "field_power": power,
            "charge_projection": field.projection,
            "flux_residual": float(np.max(np.abs(boundary_flux_compatibility(f, boundary, grid, t)))),
            "gamma_bound": sim.gamma_bound(sup_wf), "gamma_evaluated": 0.0,
            "k_singular_bound": 0.0, "min_F": float(np.min(F)) if absolute else float("nan"),
            "max_F": float(np.max(F)) if absolute else float("nan"),
            "picard_iters": 0.0,
        }
        if prev is not None:
            dtp = t - prev["t"]
            row["energy_identity_residual"] = (energy - prev["field_energy"]) / dtp + 2.0 * prev["field_power"]
            # global continuity: d/dt int rho + boundary outflow of j
            row["mass_residual"] = (mass - prev["_mass"]) / dtp + (prev["_jb"][1] - prev["_jb"][0])
            row["gamma_evaluated"] = prev["_gamma"]
            row["k_singular_bound"] = prev["_ksing"]
            row["picard_iters"] = prev["_iters"]
        row["_mass"], row["_jb"] = mass, jb
        rows.append(row)
        if snapshot_every and n % snapshot_every == 0:
            snaps.append((t, f.copy(), field))
        if n == cfg.n_steps:
            break
        if absolute:
            F, prep = sim.picard_step(F, t, boundary, cfg.dt, field)
            if not prep.converged:
                log.warning("Picard iteration stopped at %d iterations, last increment %.3e",
                            prep.iterations, prep.increments[-1])
            f = (F - sim.mu) / sq
            row["_gamma"], row["_ksing"], row["_iters"] = 1.0, 0.0, float(prep.iterations)
        else:
            f, info = sim.step(f, t, boundary, cfg.dt, field)
            row["_gamma"] = float(info["gamma_evaluated"])
            row["_ksing"] = info["k_singular_bound"]
            row["_iters"] = 0.0
        t = t + cfg.dt
        field = sim.field_of(f)
        prev = row
    for r in rows:
        for k in ("_mass", "_jb", "_gamma", "_ksing", "_iters"):
            r.pop(k, None)
    rep = DistributionField(F if absolute else f, t, grid,
                            Representation.ABSOLUTE if absolute else Representation.PERTURBATION)
    summary["t_final"] = t
    summary.update(local_boundedness([r["t"] for r in rows], [r["sup_w"] for r in rows], cfg.smallness_M))
    return RunHistory(rows, summary, rep, snaps)


def local_boundedness(t, sup_w, M: float) -> dict:
    """Step constant C from the first step, the implied clock 1/(2C) and the bound up to it.

    C = max(log(s_1/s_0)/dt, 0) is the growth the local argument controls.
    Taking the largest rate over the whole run instead would make the bound
    hold by construction. When the data are at most M/2 the weighted norm
    should stay below M for t <= 1/(2C).
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(sup_w, dtype=float)
    C = 0.0
    if s.size > 1 and s[0] > 0.0 and s[1] > 0.0:
        C = max(float(np.log(s[1] / s[0]) / (t[1] - t[0])), 0.0)
    t_hat = 1.0 / (2.0 * C) if C > 0.0 else float("inf")
    applies = bool(s.size and s[0] <= 0.5 * M)
    upto = s[t <= t_hat]
    return {"step_constant": C, "t_hat": t_hat, "local_bound_applies": applies,
            "local_bound_holds": bool(not applies or np.all(upto <= M))}


def relax_homogeneous(f0, sim: Simulator, config: SolverConfig | None = None) -> RunHistory:
    """Space-homogeneous relaxation df/dt = -L f + Gamma(f, f) on the lattice.

    Same exponential integrator as the transport step without the free
    streaming. Because the factor phi_1(nu, dt) depends on v, one step
    moves the conserved moments by O(dt); they are put back by subtracting
    the projection of the increment. ``mass_residual`` records the remaining
    moment drift and ``l2`` the size of the non-hydrodynamic part (I - P) f.
    """
    cfg = sim.config if config is None else config
    L = sim.grid.lattice
    wp = cfg.weights
    f = np.asarray(f0, dtype=float).copy()
    basis = moment_matrix(L) * sim.sq[:, None]
    hydro = sim.op.basis
    m0 = basis.T @ f * L.cell_volume
    scale = max(float(np.max(np.abs(m0))), float(np.max(np.abs(f))), 1e-300)
    rows = []
    t = 0.0
    for n in range(cfg.n_steps + 1):
        w = weight(t, sim.V, wp)
        sup_wf = float(np.max(np.abs(w * f)))
        sim._check_smallness(sup_wf, t)
        drift = float(np.max(np.abs(basis.T @ f * L.cell_volume - m0))) / scale
        micro = f - project(f, hydro, L.cell_volume)
        row = {c: 0.0 for c in HISTORY_COLUMNS + EXTRA_COLUMNS}
        row.update({"t": t, "sup_w": sup_wf, "lp_w": float(np.sum(np.abs(w * f) ** cfg.p) * L.cell_volume) ** (1.0 / cfg.p),
                    "l2": float(np.sqrt(np.sum(micro * micro) * L.cell_volume)), "mass_residual": drift,
                    "gamma_bound": sim.gamma_bound(sup_wf), "min_F": float("nan"), "max_F": float("nan")})
        if n == cfg.n_steps:
            rows.append(row)
            break
        src = sim.apply_Kc(f)
        gamma_on = sim.gamma_needed(sup_wf)
        if gamma_on:
            src = src + sim.op.apply_gamma(f, f)
        row["gamma_evaluated"] = float(gamma_on)
        rows.append(row)
        f_new = np.exp(-sim.nu * cfg.dt) * f + _phi1(sim.nu, cfg.dt) * src
        f = f_new - project(f_new - f, hydro, L.cell_volume)
        t += cfg.dt
    summary = {"rho": wp.rho, "steps": cfg.n_steps, "t_final": t,
               "max_moment_drift": max(r["mass_residual"] for r in rows),
               "hydrodynamic_part": float(np.sqrt(np.sum(project(f, hydro, L.cell_volume) ** 2) * L.cell_volume))}
    return RunHistory(rows, summary, None, [])


def _weighted_datum(boundary: BoundaryDatum, weights: WeightParams):
    if boundary is None or boundary.is_zero:
        return None

    def g(t, face, v):
        return weight(t, v, weights) * boundary(t, face, v)
    return g


# ---------------------------------------------------------------- snapshots

SNAPSHOT_FORMAT = "vpbsim-snapshot"


def save_snapshot(path, f, field: PotentialField, grid: PhaseGrid, t: float, params: dict | None = None,
                  run_id: str | None = None) -> Path:
    """JSON header, then f, rho~, phi and grad phi as little-endian float64 blocks."""
    path = Path(path)
    f = np.ascontiguousarray(f, dtype="<f8")
    rho = np.ascontiguousarray(charge_density(f, grid), dtype="<f8")
    blocks = [f, rho, np.ascontiguousarray(field.phi, dtype="<f8"),
              np.ascontiguousarray(field.grad_phi, dtype="<f8")]
    body = b"".join(b.tobytes() for b in blocks)
    digest = hashlib.sha256(body).hexdigest()
    header = {
        "format": SNAPSHOT_FORMAT,
        "grid": {"geometry": grid.geometry.kind.value, "size": grid.geometry.size, "nx": grid.nx,
                 "n": grid.lattice.n, "vmax": grid.lattice.vmax},
        "time": float(t),
        "params": params or {},
        "run_id": run_id or digest[:12],
        "blocks": {"f": list(f.shape), "rho": list(rho.shape), "phi": list(field.phi.shape),
                   "grad_phi": list(field.grad_phi.shape)},
        "sha256": digest,
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(body)
    return path


def load_snapshot(path) -> tuple:
    """Returns (header, dict of arrays)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise ParseError(f"{path}: truncated snapshot")
    (size,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8:8 + size].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad snapshot header") from exc
    if header.get("format") != SNAPSHOT_FORMAT:
        raise ParseError(f"{path}: not a snapshot")
    body = raw[8 + size:]
    if hashlib.sha256(body).hexdigest() != header["sha256"]:
        raise ParseError(f"{path}: checksum mismatch")
    data = np.frombuffer(body, dtype="<f8")
    out, pos = {}, 0
    for name in ("f", "rho", "phi", "grad_phi"):
        shape = tuple(header["blocks"][name])
        count = int(np.prod(shape))
        out[name] = data[pos:pos + count].reshape(shape).copy()
        pos += count
    return header, out


__all__ = [
    "BoundaryDatum", "DistributionField", "PicardReport", "Representation", "RunHistory",
    "Simulator", "SolverConfig", "boundary_flux_compatibility", "compatibility_residual",
    "duhamel_step", "flux_coefficients", "load_snapshot", "local_boundedness", "picard_solve", "run_simulation",
    "relax_homogeneous", "save_snapshot", "HISTORY_COLUMNS", "EXTRA_COLUMNS",
]
