"""Continuum collision quantities: post-collision map, frequency and kernels.

Everything here is evaluated pointwise by one- or two-dimensional quadrature
and is independent of the velocity lattice, which makes these functions the
oracles for the lattice operators.

With b0 = C_b |cos theta| the angular integral in the sigma parametrisation
is C_b/2 times the plain sphere measure, which is what makes the gain term
symmetric in (u', v').
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import integrate, special

from ..kinematics import chi_tilde
from ..weights import WeightParams, theta_tilde
from .params import CollisionParams, chi, sphere_rule


def post_collision(u, v, omega):
    """u' = u - [(u-v).w]w, v' = v + [(u-v).w]w for unit w; broadcasts."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(omega, dtype=float)
    s = np.sum((u - v) * w, axis=-1, keepdims=True)
    return u - s * w, v + s * w


def k2x_bound(v, u, gamma: float, s1: float = 0.5, s2: float = 0.5):
    """Right-hand side of the pointwise k2 bound, without its constant."""
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    d2 = np.sum((u - v) ** 2, axis=-1)
    dv = np.sum(v * v, axis=-1) - np.sum(u * u, axis=-1)
    d = np.sqrt(d2)
    ex = np.exp(-s2 / 8.0 * d2 - s1 / 8.0 * dv * dv / d2)
    return ex / (d * (1.0 + np.linalg.norm(v, axis=-1) + np.linalg.norm(u, axis=-1)) ** (1.0 - gamma))


# ---------------------------------------------------------------- frequency

_GJ_NODES = 96
_GL_NODES = 64
_TAIL = 12.0


@lru_cache(maxsize=None)
def _jacobi(gamma: float):
    # nodes/weights for int_0^1 x^(gamma+2) g(x) dx
    x, w = special.roots_jacobi(_GJ_NODES, 0.0, gamma + 2.0)
    return 0.5 * (x + 1.0), w * 0.5 ** (gamma + 3.0)


def _psi(r, s):
    # e^{-(r^2+s^2)/2} 2 sinh(rs)/(rs), written without overflow
    rs = r * s
    small = rs < 1e-8
    safe = np.where(small, 1.0, rs)
    val = np.exp(-0.5 * (r - s) ** 2) * (-np.expm1(-2.0 * safe)) / safe
    return np.where(small, 2.0 * np.exp(-0.5 * (r * r + s * s)), val)


def _nu_speed(s: float, gamma: float) -> float:
    # 4 pi^2 int_0^inf r^(gamma+2) psi(r, s) dr
    if s <= _TAIL:
        a = s + _TAIL
        x, w = _jacobi(gamma)
        r = a * x
        val = a ** (gamma + 3.0) * np.dot(w, _psi(r, s))
    else:
        # all mass sits in |r - s| < TAIL; the integrand is smooth there
        x, w = np.polynomial.legendre.leggauss(_GL_NODES)
        r = s + _TAIL * x
        val = _TAIL * np.dot(w, r ** (gamma + 2.0) * _psi(r, s))
    return 4.0 * np.pi ** 2 * val


def collision_frequency(v, params: CollisionParams | None = None):
    """nu(v) = int |u-v|^gamma b0 mu(u) du dw for speeds or (..., 3) velocities.

    The radial integral is done in closed form for gamma = -1 and by a
    Gauss-Jacobi rule absorbing r^(gamma+2) otherwise.
    """
    params = CollisionParams() if params is None else params
    v = np.asarray(v, dtype=float)
    s = np.linalg.norm(v, axis=-1) if (v.ndim >= 1 and v.shape[-1] == 3) else np.abs(v)
    if params.gamma == -1.0:
        safe = np.where(s > 1e-8, s, 1.0)
        out = np.where(s > 1e-8, 2.0 * np.pi * (2.0 * np.pi) ** 1.5 * special.erf(safe / np.sqrt(2.0)) / safe,
                       8.0 * np.pi ** 2 * (1.0 - s * s / 6.0))
    else:
        flat = np.atleast_1d(s).ravel()
        uniq, inv = np.unique(flat, return_inverse=True)
        vals = np.array([_nu_speed(float(x), params.gamma) for x in uniq])
        out = vals[inv].reshape(np.shape(s))
    out = params.b0_cap * out
    return float(out) if np.ndim(out) == 0 else out


def collision_frequency_quad(speed: float, params: CollisionParams) -> float:
    """Adaptive-quadrature nu(|v|), used to cross-check collision_frequency."""
    g = params.gamma

    def f(r):
        return r ** (g + 2.0) * _psi(np.array(r), speed)

    val, _ = integrate.quad(f, 0.0, speed + 20.0, points=[max(speed, 1e-3)], limit=400,
                            epsabs=0.0, epsrel=1e-12)
    return params.b0_cap * 4.0 * np.pi ** 2 * val


def sqrt_mu_frequency(v, params: CollisionParams):
    """2 pi C_b int |u-v|^gamma sqrt(mu(u)) du = 2^((3+gamma)/2) nu(v/sqrt 2)."""
    v = np.asarray(v, dtype=float)
    return 2.0 ** (0.5 * (3.0 + params.gamma)) * collision_frequency(v / np.sqrt(2.0), params)


def gamma_bound_constant(v, params: CollisionParams):
    """Certified pointwise factor c(v) with |w Gamma(f,f)|(v) <= c(v) ||w f||_inf^2.

    Uses w(v) <= w(u')w(v') for the gain part and w >= 1 for the loss part;
    each part is then bounded by the sqrt(mu)-weighted frequency.
    """
    return 2.0 * sqrt_mu_frequency(v, params)


# ------------------------------------------------------------ k2 kernel

@lru_cache(maxsize=None)
def _leg(n: int):
    return np.polynomial.legendre.leggauss(n)


def _panels(a: float, b: float, width: float, nodes: int = 12):
    if b <= a:
        return np.empty(0), np.empty(0)
    m = max(1, int(np.ceil((b - a) / width)))
    edges = np.linspace(a, b, m + 1)
    x, w = _leg(nodes)
    lo, hi = edges[:-1, None], edges[1:, None]
    pts = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    return pts.ravel(), (0.5 * (hi - lo) * w).ravel()


def _graded(a: float, b: float, nodes: int = 12):
    # geometric panels resolving variation on the scale of a near rho = a
    if b <= a:
        return np.empty(0), np.empty(0)
    start = max(a, 1e-12)
    edges = [a]
    e = max(2.0 * start, start + 1e-6)
    while e < b:
        edges.append(e)
        e *= 2.0
    edges.append(b)
    x, w = _leg(nodes)
    P, W = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        P.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        W.append(0.5 * (hi - lo) * w)
    return np.concatenate(P), np.concatenate(W)


def _rho_rule(d: float, a: float, eps: float):
    """Quadrature for rho in [0, inf) adapted to the chi ramp and the peak a."""
    rho_1 = np.sqrt(max(eps * eps - d * d, 0.0))
    rho_2 = np.sqrt(max(4.0 * eps * eps - d * d, 0.0))
    top = a + _TAIL
    parts = []
    if rho_2 > rho_1:
        parts.append(_panels(rho_1, rho_2, (rho_2 - rho_1) / 4.0, 16))
    near = min(max(rho_2, 0.0) + 1.0, top)
    parts.append(_graded(rho_2, near) if d < 0.5 else _panels(rho_2, near, 0.5))
    parts.append(_panels(near, top, 0.5))
    P = np.concatenate([p for p, _ in parts])
    W = np.concatenate([w for _, w in parts])
    return P, W


def _k2_single(v, u, params: CollisionParams) -> float:
    xi = u - v
    d = float(np.linalg.norm(xi))
    if d == 0.0:
        return np.inf
    e = xi / d
    c = 0.5 * (u + v)
    cpar = float(np.dot(c, e))
    a = float(np.linalg.norm(c - cpar * e))
    eps, g = params.chi_epsilon, params.gamma
    rho, w = _rho_rule(d, a, eps)
    R = np.sqrt(d * d + rho * rho)
    integrand = rho * R ** (g - 1.0) * chi(R, eps) * np.exp(-0.5 * (rho - a) ** 2) * special.i0e(rho * a)
    J = float(np.dot(w, integrand))
    return params.b0_cap * 8.0 * np.pi / d * np.exp(-d * d / 8.0 - 0.5 * cpar * cpar) * J


def eval_k2_chi(v, u, params: CollisionParams | None = None, bound_check: bool = False,
                bound_constant: float | None = None, s1: float = 0.5, s2: float = 0.5):
    """Integral kernel of K_2^chi, K_2^chi f(v) = int k2(v, u) f(u) du.

    After the Carleman change of variables the cutoff acts on the
    pre-collision relative speed |xi + eta| >= |u - v|, so the kernel is
    positive even for |u - v| below eps. The planar integral over eta is
    reduced to a radial one with a modified Bessel function.

    With ``bound_check`` the value is compared with bound_constant times the
    pointwise bound and an AssertionError is raised if it exceeds it.
    """
    params = CollisionParams() if params is None else params
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    vb, ub = np.broadcast_arrays(v, u)
    flat_v = vb.reshape(-1, 3)
    flat_u = ub.reshape(-1, 3)
    out = np.array([_k2_single(a, b, params) for a, b in zip(flat_v, flat_u)])
    out = out.reshape(vb.shape[:-1])
    if bound_check:
        if bound_constant is None:
            raise ValueError("bound_check needs a fitted bound_constant")
        rhs = bound_constant * k2x_bound(vb, ub, params.gamma, s1, s2)
        if np.any(out > rhs):
            raise AssertionError("k2 exceeds the fitted envelope")
    return float(out) if out.ndim == 0 else out


def k2_plane_oracle(v, u, params: CollisionParams, nr: int = 400, nphi: int = 256) -> float:
    """k2 by direct 2D quadrature over the plane orthogonal to u - v.

    Independent of the Bessel reduction in eval_k2_chi: polar coordinates
    around the origin of the plane, Gauss-Legendre in radius (with a split
    at the cutoff) and the trapezoid rule in angle.
    """
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    xi = u - v
    d = np.linalg.norm(xi)
    e = xi / d
    tmp = np.array([1.0, 0.0, 0.0]) if abs(e[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = tmp - np.dot(tmp, e) * e
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e, e1)
    eps = params.chi_epsilon
    top = np.linalg.norm(u) + np.linalg.norm(v) + 14.0
    brk = np.sqrt(max(4.0 * eps * eps - d * d, 0.0))
    x, w = np.polynomial.legendre.leggauss(nr)
    segs = [(0.0, brk), (brk, top)] if brk > 0 else [(0.0, top)]
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    total = 0.0
    for lo, hi in segs:
        r = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        wr = 0.5 * (hi - lo) * w
        eta = (r[:, None, None] * (np.cos(phi)[None, :, None] * e1 + np.sin(phi)[None, :, None] * e2))
        G = np.sqrt(d * d + r * r)[:, None]
        vals = G ** params.gamma * chi(G, eps) * (d / G) \
            * np.exp(-0.25 * np.sum((u + eta) ** 2, axis=-1)) * np.exp(-0.25 * np.sum((v + eta) ** 2, axis=-1))
        total += np.sum(wr[:, None] * r[:, None] * vals) * (2.0 * np.pi / nphi)
    # the two gain terms coincide for |cos theta|, hence the factor 2
    return float(params.b0_cap * 2.0 * 2.0 / (d * d) * total)


def k2_row_integral(v, params: CollisionParams, nrad: int = 40, nodes: int = 110,
                    rmax: float = 14.0) -> float:
    """int k2(v, u) du by spherical quadrature centred at v.

    The 1/|u - v| singularity is absorbed by the r^2 Jacobian.
    """
    v = np.asarray(v, dtype=float)
    sig, sw = sphere_rule(nodes)
    x, w = np.polynomial.legendre.leggauss(nrad)
    edges = [0.0, 0.5, 2.0, 5.0, rmax]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        r = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        wr = 0.5 * (hi - lo) * w
        for ri, wi in zip(r, wr):
            pts = v[None, :] + ri * np.asarray(sig)
            vals = np.array([_k2_single(v, p, params) for p in pts])
            total += wi * ri * ri * float(np.dot(sw, vals))
    return total


# --------------------------------------------------------- (1-chi) bound

@lru_cache(maxsize=None)
def _singular_moment(gamma: float) -> float:
    # int_0^2 (1 - chi_tilde(s - 1)) s^(gamma+2) ds
    head = 1.0 / (gamma + 3.0)
    tail, _ = integrate.quad(lambda s: (1.0 - chi_tilde(s - 1.0)) * s ** (gamma + 2.0), 1.0, 2.0,
                             epsabs=1e-14, epsrel=1e-13)
    return head + tail


def singular_volume(params: CollisionParams) -> float:
    """int (1 - chi(|g|)) |g|^gamma dg = 4 pi eps^(gamma+3) int_0^2 (1-chi~(s-1)) s^(gamma+2) ds."""
    return 4.0 * np.pi * params.chi_epsilon ** (params.gamma + 3.0) * _singular_moment(params.gamma)


def _ball_sup(a: float, speed, radius: float):
    # sup over |y - v| <= radius of exp(-a |y|^2), a > 0
    return np.exp(-a * np.maximum(speed - radius, 0.0) ** 2)


def k_singular_bound(v, t: float, params: CollisionParams, weights: WeightParams):
    """Certified c(v) with w |K^{1-chi}(h / w)|(v) <= c(v) ||h||_inf.

    All post-collision and partner velocities lie within 2 eps of v, so each
    Gaussian factor is replaced by its sup over that ball. The result is
    proportional to eps^(gamma+3) up to those sup factors.
    """
    v = np.asarray(v, dtype=float)
    speed = np.linalg.norm(v, axis=-1) if (v.ndim >= 1 and v.shape[-1] == 3) else np.abs(v)
    tt = float(theta_tilde(t, weights))
    r = 2.0 * params.chi_epsilon
    s_half = _ball_sup(0.25, speed, r)             # sup sqrt(mu)
    s_ratio = _ball_sup(0.25 - tt, speed, r)       # sup sqrt(mu)/w
    w_v = np.exp(tt * speed ** 2)
    sq_v = np.exp(-0.25 * speed ** 2)
    vol = singular_volume(params)
    k1 = 2.0 * np.pi * sq_v * vol * s_ratio
    k2 = 2.0 * (2.0 * np.pi) * vol * s_half * s_ratio
    return params.b0_cap * w_v * (k1 + k2)


def _sqmu(z):
    return np.exp(-0.25 * np.sum(z * z, axis=-1))


def k_singular_quadrature(f, v, params: CollisionParams, nrad: int = 24, nodes: int = 110,
                          absolute: bool = False) -> float:
    """K^{1-chi} f(v) for a callable f by quadrature over the small ball.

    With ``absolute`` the K_1 part is added instead of subtracted, giving
    (K_2 + K_1)^{1-chi} f, the quantity the certified bound controls.
    Used to confirm that k_singular_bound really bounds the true term.
    """
    v = np.asarray(v, dtype=float)
    eps, g = params.chi_epsilon, params.gamma
    sig, sw = sphere_rule(nodes)
    sig = np.asarray(sig)
    x, w = np.polynomial.legendre.leggauss(nrad)
    total = 0.0
    for lo, hi in ((0.0, eps), (eps, 2.0 * eps)):
        r = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        wr = 0.5 * (hi - lo) * w
        for ri, wi in zip(r, wr):
            cut = 1.0 - float(chi(ri, eps))
            if cut == 0.0:
                continue
            u = v[None, :] + ri * sig                       # partner directions
            sq_u = np.exp(-0.25 * np.sum(u * u, axis=1))
            k1 = np.dot(sw, sq_u * f(u))
            c = 0.5 * (u[:, None, :] + v[None, None, :])
            vp = c + 0.5 * ri * sig[None, :, :]
            up = c - 0.5 * ri * sig[None, :, :]
            inner = sq_u[:, None] * (f(up) * _sqmu(vp) + f(vp) * _sqmu(up))
            k2 = 0.5 * np.dot(sw, inner @ sw)
            sq_v = float(np.exp(-0.25 * v @ v))
            sign = 1.0 if absolute else -1.0
            total += wi * ri * ri * ri ** g * cut * (k2 + sign * sq_v * 2.0 * np.pi * k1)
    return params.b0_cap * total
