import numpy as np
import pytest
from hypothesis import given, strategies as st

from vpbsim.domain import (Classification, DomainGeometry, boundary_nodes, chart, classify_boundary,
                           normal, second_fundamental_form, signed_distance)
from vpbsim.errors import NotOnBoundary

slab = DomainGeometry.slab(1.0)
ball = DomainGeometry.ball(1.0)


def test_signed_distance_examples():
    assert signed_distance(slab, 0.5) == pytest.approx(-0.5)
    assert signed_distance(ball, np.zeros(3)) == pytest.approx(-1.0)
    assert signed_distance(ball, [1.0, 0.0, 0.0]) == pytest.approx(0.0)


def test_normals():
    np.testing.assert_allclose(normal(slab, 0.0), [-1, 0, 0])
    np.testing.assert_allclose(normal(slab, 1.0), [1, 0, 0])
    np.testing.assert_allclose(normal(DomainGeometry.ball(2.0), [0, 2, 0]), [0, 1, 0])


def test_normal_off_boundary_raises():
    with pytest.raises(NotOnBoundary):
        normal(slab, 0.4)
    with pytest.raises(NotOnBoundary):
        normal(ball, [0.5, 0, 0])


def test_classification():
    assert classify_boundary(slab, 0.0, [1, 0, 0]) is Classification.INCOMING
    assert classify_boundary(slab, 1.0, [1, 0, 0]) is Classification.OUTGOING
    assert classify_boundary(slab, 0.0, [0, 1, 0]) is Classification.GRAZING


@given(st.floats(-0.99, 0.99), st.floats(0, 2 * np.pi), st.floats(0.3, 3.0))
def test_ball_normal_is_unit_and_radial(z, phi, R):
    g = DomainGeometry.ball(R)
    r = np.sqrt(1 - z * z)
    x = R * np.array([r * np.cos(phi), r * np.sin(phi), z])
    n = normal(g, x)
    assert np.linalg.norm(n) == pytest.approx(1.0)
    np.testing.assert_allclose(n, x / R, atol=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_sign_convention(a, b, c):
    x = np.array([a, b, c])
    d = signed_distance(ball, x)
    assert (d < 0) == (np.linalg.norm(x) < 1.0)


def test_convexity_constants():
    rng = np.random.default_rng(0)
    p = np.array([0.0, 0.0, 1.0])
    for _ in range(5):
        zeta = rng.normal(size=2)
        # -sum zeta_i zeta_j d_ij eta . n >= C |zeta|^2 with C = 1/R for the ball
        assert -second_fundamental_form(ball, p, zeta) == pytest.approx(np.dot(zeta, zeta), rel=1e-5)
        assert second_fundamental_form(slab, 0.0, zeta) == pytest.approx(0.0, abs=1e-9)
    assert ball.convexity_constant == pytest.approx(1.0)
    assert slab.convexity_constant == 0.0


def test_chart_lands_on_boundary():
    p = np.array([0.0, 1.0, 0.0])
    for xp in ([0.1, 0.0], [0.0, -0.2], [0.05, 0.05]):
        assert signed_distance(ball, chart(ball, p, np.array(xp))) == pytest.approx(0.0, abs=1e-12)


def test_boundary_nodes_area():
    _, n, w = boundary_nodes(DomainGeometry.ball(2.0))
    assert w.sum() == pytest.approx(4 * np.pi * 4.0)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0)
    pts, nrm, area = boundary_nodes(slab)
    assert len(pts) == 2 and area.sum() == 2.0
