"""Maxwellian reference state, time-velocity weight and effective frequency.

The weight is w(t, v) = exp(theta_tilde(t) |v|^2) with
theta_tilde(t) = vartheta (1 + (1 + t)^-theta). Its logarithmic derivatives
are closed-form, so nothing here is differentiated numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams

RHO0 = (2.0 * np.pi) ** 1.5  # integral of mu over R^3


def _speed2(v):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return v * v
    return np.sum(v * v, axis=-1) if v.shape[-1] == 3 else v * v


def maxwellian(v):
    """mu(v) = exp(-|v|^2 / 2); ``v`` is (..., 3) or a speed array."""
    return np.exp(-0.5 * _speed2(v))


def sqrt_maxwellian(v):
    return np.exp(-0.25 * _speed2(v))


def japanese(v):
    """<v> = sqrt(1 + |v|^2)."""
    return np.sqrt(1.0 + _speed2(v))


def rho_exponent(gamma: float, theta: float) -> float:
    """Decay exponent rho = (theta gamma + 2) / (2 - gamma)."""
    if not theta * gamma + 2.0 > 0.0:
        raise InvalidParams("theta*gamma+2>0")
    rho = (theta * gamma + 2.0) / (2.0 - gamma)
    if not 0.0 < rho < 1.0:
        raise InvalidParams("rho in (0,1)")
    return rho


@dataclass(frozen=True)
class WeightParams:
    vartheta: float = 0.01
    theta: float = 1.0
    gamma: float = -1.0

    def __post_init__(self):
        for problem in self.violations():
            raise InvalidParams(problem)

    def violations(self) -> list:
        out = []
        if not -3.0 < self.gamma < 0.0:
            out.append("gamma in (-3,0)")
        if not self.theta > 0.0:
            out.append("theta>0")
        if not 0.0 < self.vartheta <= 0.125:
            out.append("0<vartheta<=1/8")
        if not self.theta * self.gamma + 2.0 > 0.0:
            out.append("theta*gamma+2>0")
        return out

    @property
    def rho(self) -> float:
        return rho_exponent(self.gamma, self.theta)


def theta_tilde(t, params: WeightParams):
    t = np.asarray(t, dtype=float)
    return params.vartheta * (1.0 + (1.0 + t) ** (-params.theta))


def theta_tilde_dot(t, params: WeightParams):
    t = np.asarray(t, dtype=float)
    return -params.vartheta * params.theta * (1.0 + t) ** (-params.theta - 1.0)


def weight(t, v, params: WeightParams):
    return np.exp(theta_tilde(t, params) * _speed2(v))


def static_weight(v, vartheta: float):
    """w_vartheta(v) = exp(vartheta |v|^2)."""
    return np.exp(vartheta * _speed2(v))


def grad_log_weight(t, v, params: WeightParams):
    """grad_v w / w = 2 theta_tilde v."""
    return 2.0 * theta_tilde(t, params) * np.asarray(v, dtype=float)


def dt_log_weight(t, v, params: WeightParams):
    """d_t w / w = theta_tilde'(t) |v|^2, which is nonpositive."""
    return theta_tilde_dot(t, params) * _speed2(v)


def nu_tilde(t, v, grad_phi, params: WeightParams, nu):
    """Effective frequency nu + v.grad(phi)/2 + grad(phi).grad_v w/w - d_t w/w.

    ``v`` and ``grad_phi`` broadcast as (..., 3) arrays; ``nu`` is the
    collision frequency at ``v``.
    """
    v = np.asarray(v, dtype=float)
    gp = np.asarray(grad_phi, dtype=float)
    vdot = np.sum(v * gp, axis=-1)
    tt = theta_tilde(t, params)
    return nu + (0.5 + 2.0 * tt) * vdot - dt_log_weight(t, v, params)


def positivity_condition(params: WeightParams, delta1: float) -> bool:
    """Sufficient condition vartheta*theta > delta_1 for nu_tilde > 0."""
    return params.vartheta * params.theta > delta1


def field_smallness(times, grad_phi_sup, rho: float, lam: float) -> float:
    """delta_1 proxy: sup_t exp(lam t^rho) ||grad phi(t)||_inf."""
    times = np.asarray(times, dtype=float)
    g = np.asarray(grad_phi_sup, dtype=float)
    if times.size == 0:
        return 0.0
    return float(np.max(np.exp(lam * times ** rho) * g))


def attenuation_free(t, s, speed2, params: WeightParams, nu):
    """exp(int_t^s nu_tilde) for a field-free trajectory (v constant).

    For s <= t this is at most one.
    """
    vt, th = params.vartheta, params.theta
    integral = nu * (s - t) + vt * speed2 * ((1.0 + t) ** (-th) - (1.0 + s) ** (-th))
    return np.exp(integral)
