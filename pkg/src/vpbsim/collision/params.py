"""Collision parameters, the relative-speed cutoff chi and the sphere rule."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import lebedev_rule

from ..errors import InvalidParams
from ..kinematics import chi_tilde

# Lebedev node counts and the scipy polynomial order producing them
_LEBEDEV = {6: 3, 14: 5, 26: 7, 38: 9, 50: 11, 74: 13, 86: 15, 110: 17, 146: 19,
            170: 21, 194: 23, 230: 25, 266: 27, 302: 29, 350: 31, 434: 35,
            590: 41, 770: 47, 974: 53, 1202: 59, 1454: 65, 1730: 71, 2030: 77}


@dataclass(frozen=True)
class CollisionParams:
    """Soft-potential cutoff kernel |u-v|^gamma b0(theta), b0 = C_b |cos theta|.

    ``sphere_nodes`` is the Lebedev node count of the angular rule.
    """

    gamma: float = -1.0
    chi_epsilon: float = 0.01
    sphere_nodes: int = 26
    b0_cap: float = 1.0

    def __post_init__(self):
        for problem in self.violations():
            raise InvalidParams(problem)

    def violations(self) -> list:
        out = []
        if not -3.0 < self.gamma < 0.0:
            out.append("gamma in (-3,0)")
        if not self.chi_epsilon > 0.0:
            out.append("epsilon>0")
        if self.sphere_nodes not in _LEBEDEV:
            out.append(f"sphere_nodes must be a Lebedev size {sorted(_LEBEDEV)}")
        if not self.b0_cap > 0.0:
            out.append("b0 cap constant C_b>0")
        return out

    def with_epsilon(self, eps: float) -> "CollisionParams":
        return CollisionParams(self.gamma, eps, self.sphere_nodes, self.b0_cap)


def b0(cos_theta, params: CollisionParams | None = None):
    cap = 1.0 if params is None else params.b0_cap
    return cap * np.abs(np.asarray(cos_theta, dtype=float))


def chi(s, eps: float):
    """Cutoff chi(s) = chi_tilde((s - eps)/eps): 0 below eps, 1 above 2 eps."""
    return chi_tilde((np.asarray(s, dtype=float) - eps) / eps)


@lru_cache(maxsize=None)
def _sphere(nodes: int):
    pts, w = lebedev_rule(_LEBEDEV[nodes])
    sig = pts.T.copy()
    # pair each node with its antipode: first half, then the mirrored half
    used = np.zeros(len(w), dtype=bool)
    first, second = [], []
    for i in range(len(w)):
        if used[i]:
            continue
        j = int(np.argmin(np.linalg.norm(sig + sig[i], axis=1)))
        if j == i or np.linalg.norm(sig[j] + sig[i]) > 1e-12:
            raise InvalidParams("sphere rule is not antipodally symmetric")
        used[i] = used[j] = True
        first.append(i)
        second.append(j)
    order = first + second
    sig, w = sig[order], w[order]
    sig.setflags(write=False)
    w.setflags(write=False)
    return sig, w


def sphere_rule(nodes: int = 26):
    """Lebedev nodes (M, 3) and weights summing to 4 pi, antipodally ordered."""
    if nodes not in _LEBEDEV:
        raise InvalidParams(f"no Lebedev rule with {nodes} nodes")
    return _sphere(nodes)
