"""Backward characteristics, exit times and the kinetic weight alpha.

Characteristics solve dx/ds = v, dv/ds = E(s, x) with terminal state (x, v)
at time t. They are integrated backward with classical RK4 at a fixed step
and the first boundary crossing is located by bisection on the signed
distance. Positions are 3-vectors throughout; a scalar position is read as
(x, 0, 0), which is how slab points are usually given.

A field is any callable ``E(s, x) -> array(3)``. For negative times the
field is frozen at s = 0, since the horizon may reach back to -eps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .domain import DomainGeometry, DomainKind, normal, signed_distance, tangent_basis
from .errors import GrazingDegenerate, IntegratorFailure, InvalidParams

BISECTION_TOL = 1e-10
FD_STEP = 1e-5

Field = Callable[[float, np.ndarray], np.ndarray]


def zero_field(s, x):
    return np.zeros(3)


@dataclass(frozen=True)
class ConstantField:
    a: tuple = (0.0, 0.0, 0.0)

    def __call__(self, s, x):
        return np.asarray(self.a, dtype=float)


@dataclass(frozen=True)
class SwirlField:
    """E = strength (e_z x x) (1 + s)^-1: tangential on every sphere."""

    strength: float = 0.1

    def __call__(self, s, x):
        x = np.asarray(x, dtype=float)
        return self.strength * np.array([-x[1], x[0], 0.0]) / (1.0 + max(s, 0.0))


@dataclass(frozen=True)
class SlabField:
    """E = (E_1(s, x_1), 0, 0) from node values on a uniform cell-centred grid.

    ``values`` has shape (nt, nx): row k is the field on [k dt, (k+1) dt).
    A single row is a time-independent field.
    """

    length: float
    values: np.ndarray
    dt: float = 1.0

    def e1(self, s, x1):
        vals = np.atleast_2d(self.values)
        k = int(min(max(math.floor(max(s, 0.0) / self.dt + 1e-12), 0), vals.shape[0] - 1))
        return slab_interp(vals[k], self.length, x1)

    def __call__(self, s, x):
        x = np.asarray(x, dtype=float)
        return np.array([float(self.e1(s, x[0])), 0.0, 0.0])


def slab_interp(values, length, x1):
    """Linear interpolation of cell-centred values, constant beyond the end nodes."""
    values = np.asarray(values, dtype=float)
    nx = values.shape[-1]
    dx = length / nx
    xc = (np.arange(nx) + 0.5) * dx
    return np.interp(x1, xc, values)


def chi_tilde(tau):
    """Smooth monotone ramp: 0 for tau <= 0, 1 for tau >= 1, slope at most 2."""
    tau = np.asarray(tau, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(tau > 0, np.exp(-1.0 / np.where(tau > 0, tau, 1.0)), 0.0)
        b = np.where(tau < 1, np.exp(-1.0 / np.where(tau < 1, 1.0 - tau, 1.0)), 0.0)
        out = a / (a + b)
    out = np.where(tau <= 0, 0.0, np.where(tau >= 1, 1.0, out))
    return float(out) if out.ndim == 0 else out


def chi_tilde_prime(tau):
    tau = np.asarray(tau, dtype=float)
    inside = (tau > 0) & (tau < 1)
    t = np.where(inside, tau, 0.5)
    a = np.exp(-1.0 / t)
    b = np.exp(-1.0 / (1.0 - t))
    da = a / t ** 2
    db = -b / (1.0 - t) ** 2
    d = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    d = np.where(inside, d, 0.0)
    return float(d) if d.ndim == 0 else d


@dataclass(frozen=True)
class KineticWeightParams:
    epsilon: float = 0.01

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidParams("epsilon>0")

    def ramp(self, tau):
        return chi_tilde(tau)


@dataclass
class Trajectory:
    t: float
    x: np.ndarray
    v: np.ndarray
    t_b: float
    x_b: np.ndarray
    v_b: np.ndarray
    exited: bool
    samples: list = dc_field(default_factory=list)
    # on the ball: whether n(x_b).v_b < 0 and t + 1 >= t_b held; None elsewhere.
    # A False is recorded, never raised.
    sign_ok: bool | None = None


def _as_position(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return np.array([float(x), 0.0, 0.0])
    return x.astype(float).copy()


def _rk4_back(field, s, x, v, h):
    """One RK4 step from time s to s - h along the characteristic flow."""
    def acc(tt, xx):
        return np.asarray(field(tt, xx), dtype=float)

    k1x, k1v = v, acc(s, x)
    k2x, k2v = v - 0.5 * h * k1v, acc(s - 0.5 * h, x - 0.5 * h * k1x)
    k3x, k3v = v - 0.5 * h * k2v, acc(s - 0.5 * h, x - 0.5 * h * k2x)
    k4x, k4v = v - h * k3v, acc(s - h, x - h * k3x)
    xn = x - h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    vn = v - h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return xn, vn


def _default_step(span):
    return min(0.01, max(span, 1e-12) / 8.0)


def trace_backward(geometry: DomainGeometry, t: float, x, v, field: Field = zero_field,
                   horizon: float | None = None, ds: float | None = None,
                   record: bool = False) -> Trajectory:
    """Trace (x, v) at time t backward until it leaves the closure of the domain.

    The search covers [t - horizon, t]; the default horizon is t, i.e. back to
    s = 0. When no crossing is found the trajectory reports exited=False,
    t_b = inf and the state reached at the end of the horizon.
    """
    x0 = _as_position(x)
    v0 = np.asarray(v, dtype=float).copy()
    horizon = float(t) if horizon is None else float(horizon)
    ds = _default_step(horizon) if ds is None else float(ds)
    tol = geometry.boundary_tol
    samples = [(float(t), x0.copy(), v0.copy())] if record else []

    s, xs, vs = float(t), x0, v0
    elapsed = 0.0
    while elapsed < horizon - 1e-15:
        h = min(ds, horizon - elapsed)
        xn, vn = _rk4_back(field, s, xs, vs, h)
        if not (np.all(np.isfinite(xn)) and np.all(np.isfinite(vn))):
            raise IntegratorFailure(f"non-finite state at s={s - h}")
        if signed_distance(geometry, xn) > tol:
            # crossing inside this step: bisect on the sub-step length
            lo, hi = 0.0, h
            while hi - lo > 1e-13 * max(1.0, abs(t)):
                mid = 0.5 * (lo + hi)
                xm, _ = _rk4_back(field, s, xs, vs, mid)
                if signed_distance(geometry, xm) > 0.0:
                    hi = mid
                else:
                    lo = mid
            tau = 0.5 * (lo + hi)
            xb, vb = _rk4_back(field, s, xs, vs, tau)
            t_b = elapsed + tau
            if record:
                samples.append((float(t - t_b), xb.copy(), vb.copy()))
            traj = Trajectory(float(t), x0, v0, float(t_b), xb, vb, True, samples)
            if geometry.kind is DomainKind.BALL:
                nb = normal(geometry, xb, tol=1e-8 * geometry.diameter)
                traj.sign_ok = bool(np.dot(nb, vb) < 0.0 and t + 1.0 >= t_b)
            return traj
        s -= h
        elapsed += h
        xs, vs = xn, vn
        if record:
            samples.append((s, xs.copy(), vs.copy()))
    return Trajectory(float(t), x0, v0, math.inf, xs, vs, False, samples)


def kinetic_weight(geometry: DomainGeometry, t: float, x, v, field: Field = zero_field,
                   params: KineticWeightParams = KineticWeightParams(),
                   ds: float | None = None) -> float:
    """alpha = chi((t - t_b + eps)/eps) |n(x_b).v_b| + 1 - chi(...)."""
    eps = params.epsilon
    traj = trace_backward(geometry, t, x, v, field, horizon=t + eps, ds=ds)
    if not traj.exited:
        return 1.0
    c = params.ramp((t - traj.t_b + eps) / eps)
    nv = abs(float(np.dot(normal(geometry, traj.x_b, tol=1e-8 * geometry.diameter), traj.v_b)))
    return float(c * nv + (1.0 - c))


def exit_map(geometry: DomainGeometry, t, x, v, field=zero_field, ds=None, horizon=None):
    """(t - t_b, x_b, v_b) with x_b in 3D coordinates."""
    tr = trace_backward(geometry, t, x, v, field, horizon=horizon, ds=ds)
    if not tr.exited:
        raise GrazingDegenerate("trajectory does not reach the boundary")
    return t - tr.t_b, tr.x_b, tr.v_b


def jacobian_check(geometry: DomainGeometry, t, x, v, field=zero_field, step: float = FD_STEP,
                   ds: float | None = None, grazing_tol: float = 1e-6, horizon=None) -> float:
    """|det d(t - t_b, x_b, v_b)/d(x, v)| - 1/|n(x_b).v_b| by central differences.

    The exit position is expressed in the tangent-plane coordinates at the
    unperturbed exit point, so the map is square (6 x 6).
    """
    x = _as_position(x)
    v = np.asarray(v, dtype=float)
    horizon = 10.0 * geometry.diameter if horizon is None else horizon
    t = float(t)
    tb0, xb0, vb0 = exit_map(geometry, t, x, v, field, ds, horizon)
    n0 = normal(geometry, xb0, tol=1e-8 * geometry.diameter)
    nv = abs(float(np.dot(n0, vb0)))
    if nv < grazing_tol:
        raise GrazingDegenerate(f"|n.v_b| = {nv:.2e}")
    basis = tangent_basis(geometry, xb0)

    def image(z):
        s, xb, vb = exit_map(geometry, t, z[:3], z[3:], field, ds, horizon)
        d = xb - xb0
        return np.concatenate([[s], basis @ d, vb])

    z0 = np.concatenate([x, v])
    J = np.zeros((6, 6))
    for j in range(6):
        scale = step * max(1.0, abs(z0[j]))
        e = np.zeros(6)
        e[j] = scale
        J[:, j] = (image(z0 + e) - image(z0 - e)) / (2.0 * scale)
    return float(abs(np.linalg.det(J)) - 1.0 / nv)


def jacobian_check_slab_1d(length: float, t: float, x: float, vx: float,
                           step: float = FD_STEP) -> float:
    """Reduced (x, v_x) map of the field-free slab: |det| = 1/|v_x|."""
    if abs(vx) < 1e-12:
        raise GrazingDegenerate("v_x = 0 never reaches a face")

    def image(z):
        xx, vv = z
        tb = xx / vv if vv > 0 else (xx - length) / vv
        return np.array([t - tb, vv])

    z0 = np.array([x, vx])
    J = np.zeros((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        J[:, j] = (image(z0 + e) - image(z0 - e)) / (2.0 * step)
    return float(abs(np.linalg.det(J)) - 1.0 / abs(vx))


def flow_to(field, t, x, v, s, ds: float | None = None):
    """State at time s <= t along the characteristic through (t, x, v)."""
    span = t - s
    xs = _as_position(x)
    vs = np.asarray(v, dtype=float).copy()
    if span <= 0:
        return xs, vs
    ds = _default_step(span) if ds is None else ds
    nsteps = max(1, int(math.ceil(span / ds - 1e-12)))
    h = span / nsteps
    cur = float(t)
    for _ in range(nsteps):
        xs, vs = _rk4_back(field, cur, xs, vs, h)
        cur -= h
    return xs, vs


def trajectory_derivative_bound(t, x, v, s, field=zero_field, step: float = FD_STEP,
                                ds: float | None = None) -> float:
    """Frobenius norm of grad_v x(s; t, x, v) by central differences."""
    v = np.asarray(v, dtype=float)
    D = np.zeros((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        xp, _ = flow_to(field, t, x, v + e, s, ds)
        xm, _ = flow_to(field, t, x, v - e, s, ds)
        D[:, j] = (xp - xm) / (2.0 * step)
    return float(np.linalg.norm(D))


# ---------------------------------------------------------------------------
# vectorised slab tracer used by the solver and the diagnostics


def trace_slab_batch(length: float, x, v1, t: float, span: float, accel=None,
                     nsub: int = 8, bisect_iters: int = 48):
    """Trace many slab states (x, v_1) backward by at most ``span``.

    ``accel(s, x)`` returns E_1 at positions x (array) and may be None for a
    field-free flow. Returns (x_foot, v_foot, t_b, exited) where t_b <= span
    for exited states and inf otherwise. Exit positions are snapped to the
    face they cross.
    """
    x = np.array(x, dtype=float, copy=True)
    v = np.array(v1, dtype=float, copy=True)
    x, v = np.broadcast_arrays(x, v)
    shape = x.shape
    if accel is not None and x.ndim != 1:
        xf, vf, tb, ex = trace_slab_batch(length, x.ravel(), v.ravel(), t, span, accel,
                                          nsub, bisect_iters)
        return xf.reshape(shape), vf.reshape(shape), tb.reshape(shape), ex.reshape(shape)
    x = x.copy()
    v = v.copy()
    tb = np.full(x.shape, np.inf)
    active = np.ones(x.shape, dtype=bool)
    if span <= 0:
        return x, v, tb, ~active

    if accel is None:
        # free streaming is exact: straight lines
        xn = x - span * v
        out = (xn < 0.0) | (xn > length)
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = np.where(v > 0, x / np.where(v > 0, v, 1.0), np.inf)
            tL = np.where(v < 0, (x - length) / np.where(v < 0, v, 1.0), np.inf)
        hit = np.minimum(t0, tL)
        hit = np.where(out, np.clip(hit, 0.0, span), np.inf)
        xf = np.where(out, np.where(v > 0, 0.0, length), xn)
        return xf, v, hit, out

    def rk4(s, xx, vv, h):
        k1x, k1v = vv, accel(s, xx)
        k2x, k2v = vv - 0.5 * h * k1v, accel(s - 0.5 * h, xx - 0.5 * h * k1x)
        k3x, k3v = vv - 0.5 * h * k2v, accel(s - 0.5 * h, xx - 0.5 * h * k2x)
        k4x, k4v = vv - h * k3v, accel(s - h, xx - h * k3x)
        return (xx - h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
                vv - h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v))

    h = span / nsub
    s = t
    done = 0.0
    for _ in range(nsub):
        xs, vs = x[active], v[active]
        xn, vn = rk4(s, xs, vs, h)
        out = (xn < 0.0) | (xn > length)
        if np.any(out):
            idx = np.flatnonzero(active)[out]
            xo, vo = xs[out], vs[out]
            lo = np.zeros(xo.shape)
            hi = np.full(xo.shape, h)
            for _ in range(bisect_iters):
                mid = 0.5 * (lo + hi)
                xm, _ = rk4(s, xo, vo, mid)
                outside = (xm < 0.0) | (xm > length)
                hi = np.where(outside, mid, hi)
                lo = np.where(outside, lo, mid)
            tau = 0.5 * (lo + hi)
            xb, vb = rk4(s, xo, vo, tau)
            x[idx] = np.where(xb < 0.5 * length, 0.0, length)
            v[idx] = vb
            tb[idx] = done + tau
            keep = np.flatnonzero(active)[~out]
            x[keep], v[keep] = xn[~out], vn[~out]
            active[idx] = False
        else:
            x[active], v[active] = xn, vn
        s -= h
        done += h
        if not np.any(active):
            break
    return x, v, tb, ~active
