import numpy as np
import pytest
from hypothesis import given, strategies as st

from vpbsim.collision import (CollisionOperator, CollisionParams, KernelTable, b0, chi, collision_frequency,
                              eval_k2_chi, gamma_bound_constant, k2x_bound, k_singular_bound, post_collision,
                              sphere_rule)
from vpbsim.collision.kernel import k2_plane_oracle, k_singular_quadrature, singular_volume
from vpbsim.collision.operators import moment_matrix
from vpbsim.errors import InvalidParams, LatticeMismatch
from vpbsim.lattice import VelocityLattice
from vpbsim.weights import WeightParams, weight

vec = st.lists(st.floats(-4, 4), min_size=3, max_size=3).map(np.array)


@pytest.fixture(scope="module")
def op8():
    return CollisionOperator(VelocityLattice(8, 6.0))


@pytest.fixture(scope="module")
def table8(op8):
    return KernelTable.build(op8.lattice, op8.params, op8)


def test_post_collision_examples():
    up, vp = post_collision([1, 0, 0], [0, 0, 0], [1, 0, 0])
    np.testing.assert_allclose(up, 0, atol=1e-15)
    np.testing.assert_allclose(vp, [1, 0, 0])
    up, vp = post_collision([0.3, 0.2, 1], [0.3, 0.2, 1], [0, 1, 0])
    np.testing.assert_allclose(up, [0.3, 0.2, 1])
    up, vp = post_collision([1, 1, 0], [0, 0, 0], [0, 1, 0])
    np.testing.assert_allclose(up, [1, 0, 0])
    np.testing.assert_allclose(vp, [0, 1, 0])


@given(vec, vec, vec.filter(lambda w: np.linalg.norm(w) > 1e-3))
def test_post_collision_conserves(u, v, w):
    w = w / np.linalg.norm(w)
    up, vp = post_collision(u, v, w)
    np.testing.assert_allclose(up + vp, u + v, atol=1e-12)
    assert up @ up + vp @ vp == pytest.approx(u @ u + v @ v, abs=1e-10)


def test_params_admissibility():
    with pytest.raises(InvalidParams, match="epsilon>0"):
        CollisionParams(chi_epsilon=0.0)
    with pytest.raises(InvalidParams):
        CollisionParams(sphere_nodes=27)


def test_cutoff_and_angular_kernel():
    eps = 0.01
    s = np.linspace(0, 0.05, 501)
    c = chi(s, eps)
    assert np.all(c[s <= eps] == 0) and np.all(c[s >= 2 * eps] == 1)
    assert np.all(np.diff(c) >= 0)
    cos = np.linspace(-1, 1, 11)
    assert np.all(b0(cos) <= np.abs(cos) + 1e-15)
    x, w = sphere_rule(26)
    assert len(w) == 26 and w.sum() == pytest.approx(4 * np.pi)


def test_collision_frequency_at_rest():
    assert collision_frequency(np.zeros(3)) == pytest.approx(8 * np.pi ** 2, rel=1e-8)


@given(vec)
def test_collision_frequency_isotropic(v):
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    assert collision_frequency(q @ v) == pytest.approx(collision_frequency(v), rel=1e-10)


def test_collision_frequency_soft_decay():
    speeds = np.linspace(0, 10, 41)
    V = np.zeros((41, 3))
    V[:, 0] = speeds
    r = collision_frequency(V) * np.sqrt(1 + speeds ** 2)
    assert r.max() / r.min() < 10.0


def test_lattice_frequency_converges_to_continuum():
    # the excluded self-cell of the |u - v|^gamma sum costs O(h^(gamma+3))
    errs = []
    for n in (12, 16, 24):
        op = CollisionOperator(VelocityLattice(n, 6.0))
        V = op.lattice.points
        near = np.linalg.norm(V, axis=1) < 1.5
        errs.append(np.max(np.abs(op.nu[near] / collision_frequency(V[near]) - 1)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] < 0.15


def test_k2_vanishing_limits_and_oracle():
    p = CollisionParams()
    v = np.array([0.3, -0.2, 0.5])
    u = v + np.array([4 * p.chi_epsilon, 0, 0])
    assert eval_k2_chi(v, u, p) == pytest.approx(k2_plane_oracle(v, u, p), rel=1e-2)
    far = v + np.array([0.7, 0.4, -0.2])
    assert eval_k2_chi(v, far, p) == pytest.approx(k2_plane_oracle(v, far, p), rel=1e-2)


def test_k2_below_cutoff_is_positive_but_bounded():
    # the cutoff acts on the pre-collision relative speed, which is at least |u - v|
    p = CollisionParams()
    v = np.zeros(3)
    u = np.array([p.chi_epsilon / 2, 0, 0])
    val = eval_k2_chi(v, u, p)
    assert val > 0 and np.isfinite(val)


def test_k2_bound_check_flag():
    p = CollisionParams()
    v, u = np.array([1.0, 0, 0]), np.array([0.0, 1.0, 0.5])
    eval_k2_chi(v, u, p, bound_check=True, bound_constant=1e4)
    with pytest.raises(AssertionError):
        eval_k2_chi(v, u, p, bound_check=True, bound_constant=1e-6)
    assert k2x_bound(v, u, -1.0) > 0


def test_apply_K_zero_and_table(op8, table8):
    assert np.all(op8.apply_K(np.zeros(op8.lattice.size), table8) == 0)
    f = op8.sqmu.ravel()
    a = op8.apply_K(f, table8)
    b = op8.apply_K(f)
    assert np.max(np.abs(a - b)) <= 1e-8 * np.max(np.abs(a))


def test_table_lattice_mismatch(table8):
    op = CollisionOperator(VelocityLattice(6, 6.0))
    with pytest.raises(LatticeMismatch):
        op.apply_K(np.zeros(216), table8)
    with pytest.raises(LatticeMismatch):
        table8.apply(np.zeros(10))


def test_table_roundtrip(tmp_path, table8):
    p = table8.save(tmp_path / "t.bin")
    back = KernelTable.load(p, table8.lattice, table8.params)
    assert back.checksum() == table8.checksum()


def test_singular_part_scaling():
    p = CollisionParams()
    V = np.zeros((1, 3))
    wp = WeightParams()
    b1 = k_singular_bound(V, 0.0, p, wp)
    b2 = k_singular_bound(V, 0.0, p.with_epsilon(p.chi_epsilon / 2), wp)
    assert b1[0] / b2[0] == pytest.approx(2.0 ** (p.gamma + 3), rel=0.05)
    assert singular_volume(p) > 0


def test_singular_bound_dominates_quadrature():
    p = CollisionParams(chi_epsilon=0.02)
    wp = WeightParams()
    for s in (0.0, 1.5, 3.0):
        v = np.array([s, 0, 0])
        q = k_singular_quadrature(lambda z: 1.0 / weight(0.0, z, wp), v, p, nrad=12, nodes=50, absolute=True)
        assert weight(0.0, v, wp) * abs(q) <= float(k_singular_bound(v, 0.0, p, wp))


def test_gamma_zero_and_maxwellian(op8):
    z = np.zeros(op8.lattice.size)
    assert np.all(op8.apply_gamma(z, z) == 0)
    g8 = np.max(np.abs(op8.apply_gamma(op8.sqmu, op8.sqmu)))
    op12 = CollisionOperator(VelocityLattice(12, 6.0))
    g12 = np.max(np.abs(op12.apply_gamma(op12.sqmu, op12.sqmu)))
    assert g12 < g8 < 1e-2 * op8.nu.max()


def test_gamma_bounded_by_certificate(op8, rng):
    wp = WeightParams()
    w = weight(0.0, op8.lattice.points, wp)
    c = gamma_bound_constant(op8.lattice.points, op8.params)
    for _ in range(3):
        f = rng.uniform(-1, 1, op8.lattice.size) / w
        G = op8.apply_gamma(f, f)
        assert np.max(np.abs(w * G) / c) <= 1.0


def test_q_loss_uses_frequency(op8):
    F = op8.mu.ravel() * 1.3
    np.testing.assert_allclose(op8.q_loss(op8.mu.ravel(), F), F * op8.nu, rtol=1e-12)


def test_q_full_conserves_mass(op8, rng):
    F = op8.mu.ravel() * (1 + 0.3 * rng.uniform(-1, 1, op8.lattice.size))
    q = op8.q_full(F, F)
    M = moment_matrix(op8.lattice)
    assert np.max(np.abs(M.T @ q.total)) <= 1e-10 * np.sum(np.abs(q.total))


def test_conservative_L_kills_invariants(op8, table8):
    Kc = op8.conservative_K(table8.k1, table8.k2)
    Lc = np.diag(op8.nu) - Kc
    B = op8.basis
    assert np.max(np.abs(Lc @ B)) < 1e-10 * op8.nu.max()
    assert np.max(np.abs(B.T @ Lc)) < 1e-10 * op8.nu.max()
