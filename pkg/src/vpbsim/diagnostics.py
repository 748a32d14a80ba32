"""Weighted norms, decay fits, derivative norms and the coercivity probe.

Every quantity is a lattice quadrature: midpoint in x on the slab cells and
h^3 per velocity node. Derivatives are finite differences of the stored
profiles, central in the interior and one-sided at the edges.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .collision import CollisionOperator, KernelTable, collision_frequency
from .collision.operators import project
from .collision.params import CollisionParams
from .domain import DomainGeometry, boundary_nodes
from .errors import InvalidParams, InvalidPBeta, NonPositiveSeries
from .kinematics import chi_tilde, trace_slab_batch
from .lattice import PhaseGrid, VelocityLattice
from .weights import WeightParams, japanese, nu_tilde, weight

DEFAULT_DELTA = 0.1


# ---------------------------------------------------------------- admissibility

@dataclass(frozen=True)
class PBeta:
    """Exponent pair for the alpha-weighted derivative norm.

    Admissible when 3 < p < 6 - 2 varpi and (p-2)/p < beta < (2-varpi)/(3-varpi),
    both strict.
    """

    p: float = 4.0
    beta: float = 0.6
    varpi: float = 0.01

    def violations(self) -> list:
        out = []
        if not 0.0 < self.varpi < 1.0:
            out.append("0<varpi<1")
        if not 3.0 < self.p < 6.0 - 2.0 * self.varpi:
            out.append("Eq. p-beta range 3<p<6-2varpi")
        lo = (self.p - 2.0) / self.p
        hi = (2.0 - self.varpi) / (3.0 - self.varpi)
        if not lo < self.beta < hi:
            out.append("Eq. p-beta strict inequality")
        return out

    def check(self) -> "PBeta":
        problems = self.violations()
        if problems:
            raise InvalidPBeta("; ".join(problems) + f" (p={self.p}, beta={self.beta})")
        return self


# ---------------------------------------------------------------- norms

def time_weight(t: float, params: WeightParams, lattice: VelocityLattice) -> np.ndarray:
    """w_theta~(t, v) at the lattice nodes, flat (N,)."""
    return weight(t, lattice.points, params)


def _weighted(f, w):
    f = np.asarray(f, dtype=float)
    return f if w is None else f * np.asarray(w, dtype=float)


def weighted_norm(f, grid: PhaseGrid, w=None, p: float = np.inf) -> float:
    """||w f||_p over Omega x R^3 for an (nx, N) array; p = inf is the max."""
    if not p >= 1.0:
        raise InvalidParams("p>=1")
    g = np.abs(_weighted(f, w))
    if g.size == 0:
        return 0.0
    if np.isinf(p):
        return float(np.max(g))
    return float(grid.integrate(g ** p) ** (1.0 / p))


def velocity_norm(f, lattice: VelocityLattice, w=None, p: float = 2.0) -> float:
    """||w f||_p over the velocity lattice only, for a flat (N,) profile."""
    g = np.abs(_weighted(f, w))
    if np.isinf(p):
        return float(np.max(g))
    return float((np.sum(g ** p) * lattice.cell_volume) ** (1.0 / p))


def boundary_traces(f, grid: PhaseGrid) -> np.ndarray:
    """Values at the faces x = 0 and x = L from the nearest cells, shape (2, N)."""
    f = np.asarray(f, dtype=float)
    return np.stack([f[0], f[-1]])


def boundary_norm(traces, lattice: VelocityLattice, geometry: DomainGeometry, p: float = 2.0,
                  side: str = "+", w=None, order: int = 15) -> float:
    """|w f|_{p,+/-}: quadrature over gamma_+ or gamma_- with measure |n.v| dS dv.

    ``traces`` holds one velocity profile per boundary node of
    ``boundary_nodes(geometry, order)``: two faces for the slab.
    """
    if side not in ("+", "-"):
        raise InvalidParams("side must be '+' or '-'")
    pts, nrm, area = boundary_nodes(geometry, order)
    tr = np.abs(_weighted(traces, w))
    if tr.shape != (len(pts), lattice.size):
        raise InvalidParams(f"expected traces of shape {(len(pts), lattice.size)}, got {tr.shape}")
    nv = nrm @ lattice.points.T
    mask = nv > 0 if side == "+" else nv < 0
    if np.isinf(p):
        sel = tr[mask]
        return float(np.max(sel)) if sel.size else 0.0
    total = np.sum(np.where(mask, tr ** p * np.abs(nv), 0.0) * area[:, None]) * lattice.cell_volume
    return float(total ** (1.0 / p))


def l3_l1delta(f, grid: PhaseGrid, w=None, delta: float = DEFAULT_DELTA) -> float:
    """||w grad_v f||_{L^3_x L^{1+delta}_v} with finite-difference grad_v."""
    L = grid.lattice
    g = velocity_gradient_norm(f, L)
    if w is not None:
        g = g * np.asarray(w, dtype=float)
    q = 1.0 + delta
    inner = (np.sum(g ** q, axis=-1) * L.cell_volume) ** (1.0 / q)
    return float((np.sum(inner ** 3) * grid.dx) ** (1.0 / 3.0))


def velocity_gradient_norm(f, lattice: VelocityLattice) -> np.ndarray:
    """|grad_v f| at the nodes, same flat layout as f."""
    f = np.asarray(f, dtype=float)
    cube = f.reshape(f.shape[:-1] + lattice.shape)
    axes = tuple(range(cube.ndim - 3, cube.ndim))
    grads = np.gradient(cube, lattice.h, axis=axes)
    sq = sum(gr * gr for gr in grads)
    return np.sqrt(sq).reshape(f.shape)


def phase_gradient_norm(f, grid: PhaseGrid) -> np.ndarray:
    """|(d_x f, grad_v f)| for an (nx, N) array."""
    f = np.asarray(f, dtype=float)
    gx = np.gradient(f, grid.dx, axis=0) if grid.nx > 1 else np.zeros_like(f)
    gv = velocity_gradient_norm(f, grid.lattice)
    return np.sqrt(gx * gx + gv * gv)


# ---------------------------------------------------------------- kinetic weight

def alpha_slab(grid: PhaseGrid, t: float, e1=None, eps: float = 0.01) -> np.ndarray:
    """alpha_{f,eps} at every (x_i, v_1) node of the slab, shape (nx, n).

    The characteristic is traced back over t + eps with the field frozen at
    its current node values ``e1`` (or free streaming when None).
    """
    L = grid.lattice
    X, V1 = np.meshgrid(grid.x, L.axis, indexing="ij")
    accel = None
    if e1 is not None and np.any(e1):
        xc, vals = grid.x, np.asarray(e1, dtype=float)
        accel = lambda s, x: np.interp(x, xc, vals)  # noqa: E731
    _, vb, tb, exited = trace_slab_batch(grid.geometry.size, X, V1, t, t + eps, accel)
    ramp = chi_tilde((t - np.where(exited, tb, np.inf) + eps) / eps)
    ramp = np.where(exited, ramp, 0.0)
    return ramp * np.abs(vb) + 1.0 - ramp


def expand_alpha(alpha, lattice: VelocityLattice) -> np.ndarray:
    """Broadcast an (nx, n) alpha over (v_2, v_3) to (nx, N)."""
    n = lattice.n
    a = np.asarray(alpha, dtype=float)
    return np.broadcast_to(a[:, :, None], (a.shape[0], n, n * n)).reshape(a.shape[0], lattice.size)


def alpha_weighted_derivative_norm(f, grid: PhaseGrid, p: float = 4.0, beta: float = 0.6,
                                   w=None, alpha=None, t: float = 0.0, e1=None,
                                   eps: float = 0.01, varpi: float = 0.01) -> float:
    """||w alpha^beta d f||_p with d the full (x, v) finite-difference gradient.

    ``alpha`` is (nx, n) or (nx, N); when omitted it is computed for the slab
    at time t with field node values ``e1``.
    """
    PBeta(p, beta, varpi).check()
    if alpha is None:
        alpha = alpha_slab(grid, t, e1, eps)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (grid.nx, grid.lattice.size):
        alpha = expand_alpha(alpha, grid.lattice)
    g = phase_gradient_norm(f, grid) * alpha ** beta
    return weighted_norm(g, grid, w, p)


# ---------------------------------------------------------------- decay fit

@dataclass(frozen=True)
class DecayFit:
    lambda_hat: float
    amplitude: float
    rho_used: float
    r_squared: float

    def as_dict(self) -> dict:
        return asdict(self)


def decay_fit(t, y, rho: float) -> DecayFit:
    """Least squares for log y = log A - lambda t^rho."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.size < 5:
        raise InvalidParams("decay_fit needs at least 5 (t, y) samples")
    if np.any(~np.isfinite(y)) or np.any(y <= 0.0):
        raise NonPositiveSeries("decay series must be positive and finite")
    X = np.column_stack([np.ones_like(t), -t ** rho])
    ly = np.log(y)
    coef, *_ = np.linalg.lstsq(X, ly, rcond=None)
    fit = X @ coef
    ss_res = float(np.sum((ly - fit) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    if ss_tot <= 1e-300:
        r2 = 1.0 if ss_res <= 1e-24 * max(1.0, float(np.sum(ly ** 2))) else 0.0
    else:
        r2 = max(0.0, 1.0 - ss_res / ss_tot)
    lam = float(coef[1])
    if abs(lam) < 1e-14:
        lam = 0.0
    return DecayFit(lam, float(np.exp(coef[0])), float(rho), float(r2))


# ---------------------------------------------------------------- coercivity

@dataclass(frozen=True)
class CoercivityProbe:
    """(L f, f) and ||(I - P) f||_nu^2; the ratio is reported, never assumed."""

    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else float("nan")


def coercivity_probe(f, operator: CollisionOperator, table: KernelTable | None = None,
                     conservative: bool = False) -> CoercivityProbe:
    """Quadratic forms of the lattice L for a flat velocity profile f.

    With ``conservative`` (needs a table) L is replaced by
    (I - P) L (I - P), whose null space is exactly range(P).
    """
    L = operator.lattice
    f = np.asarray(f, dtype=float).reshape(-1)
    h3 = L.cell_volume
    nu = operator.nu
    if conservative:
        if table is None:
            raise InvalidParams("conservative probe needs a kernel table")
        Kc = operator.conservative_K(table.k1, table.k2)
        Lf = nu * f - Kc @ f
    else:
        Lf = operator.apply_L(f, table)
    g = f - project(f, operator.basis, h3)
    return CoercivityProbe(float(np.dot(Lf, f) * h3), float(np.sum(nu * g * g) * h3))


# ---------------------------------------------------------------- effective frequency

@dataclass(frozen=True)
class NuTildeStructure:
    margin: float          # min over samples of nu~ - nu_lower / 2
    c_gamma: float         # fitted constant in nu >= <v>^gamma / C_gamma
    exponent: float        # slope of log min_v nu~(t) against log(1 + t)
    rho: float


def nu_tilde_structure(times, speeds, weights: WeightParams, params: CollisionParams,
                       grad_phi_sup: float = 0.0) -> NuTildeStructure:
    """Lower-bound structure of nu~ over sampled times and speeds.

    The field enters with its worst orientation, v parallel to -grad phi,
    at magnitude ``grad_phi_sup``: a scalar, or one value per time (the
    analysis only controls the field as delta_1 exp(-Lambda_1 t^rho)). The
    collision frequency is the continuum one, so speeds far beyond any
    lattice can be sampled.
    """
    times = np.asarray(times, dtype=float)
    speeds = np.asarray(speeds, dtype=float)
    nu = collision_frequency(speeds, params)
    lower = japanese(speeds) ** params.gamma
    c_gamma = float(np.max(lower / nu))
    V = np.zeros((speeds.size, 3))
    V[:, 0] = speeds
    gp = np.broadcast_to(np.asarray(grad_phi_sup, dtype=float), times.shape)
    vals = np.stack([nu_tilde(t, V, np.array([-g, 0.0, 0.0]), weights, nu) for t, g in zip(times, gp)])
    margin = float(np.min(vals - 0.5 * lower / c_gamma))
    mins = np.min(vals, axis=1)
    slope = np.polyfit(np.log1p(times), np.log(mins), 1)[0]
    return NuTildeStructure(margin, c_gamma, float(slope), weights.rho)


# ---------------------------------------------------------------- norm report

@dataclass(frozen=True)
class NormReport:
    t: float
    sup_weighted: float
    lp_weighted: float
    boundary_out: float
    alpha_deriv_lp: float
    l2: float
    field_sup: float
    field_hess: float
    l3_l1delta: float

    def as_dict(self) -> dict:
        return asdict(self)


def norm_report(f, grid: PhaseGrid, t: float, weights: WeightParams, field=None,
                p: float = 4.0, beta: float = 0.6, delta: float = DEFAULT_DELTA,
                alpha_eps: float = 0.01, varpi: float = 0.01) -> NormReport:
    """All norms of one snapshot; ``field`` is a PotentialField or None."""
    w = time_weight(t, weights, grid.lattice)
    e1 = None if field is None else -field.grad
    alpha = alpha_slab(grid, t, e1, alpha_eps)
    return NormReport(
        t=float(t),
        sup_weighted=weighted_norm(f, grid, w, np.inf),
        lp_weighted=weighted_norm(f, grid, w, p),
        boundary_out=boundary_norm(boundary_traces(f, grid) * w, grid.lattice, grid.geometry, p, "+"),
        alpha_deriv_lp=alpha_weighted_derivative_norm(f, grid, p, beta, w, alpha, varpi=varpi),
        l2=weighted_norm(f, grid, None, 2.0),
        field_sup=0.0 if field is None else field.sup_grad(),
        field_hess=0.0 if field is None else field.sup_hessian(),
        l3_l1delta=l3_l1delta(f, grid, w, delta),
    )
