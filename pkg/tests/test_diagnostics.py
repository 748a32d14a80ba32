import numpy as np
import pytest
from hypothesis import given, strategies as st

from vpbsim import diagnostics as diag
from vpbsim.collision import CollisionOperator, CollisionParams, KernelTable
from vpbsim.domain import DomainGeometry
from vpbsim.errors import InvalidPBeta, NonPositiveSeries
from vpbsim.lattice import PhaseGrid, VelocityLattice
from vpbsim.weights import WeightParams, sqrt_maxwellian, weight


def test_weighted_norm_examples(small_grid):
    assert diag.weighted_norm(small_grid.zeros(), small_grid, p=2) == 0.0
    assert diag.weighted_norm(np.ones(small_grid.shape), small_grid) == 1.0


def test_weighted_l2_of_sqrt_mu():
    grid = PhaseGrid(DomainGeometry.slab(1.0), VelocityLattice(24, 6.0), 4)
    V = grid.lattice.points
    wp = WeightParams()
    w = weight(0.0, V, wp)
    f = np.tile(sqrt_maxwellian(V), (grid.nx, 1))
    a = 0.5 - 2 * 0.02
    exact = np.sqrt((np.pi / a) ** 1.5)
    assert diag.weighted_norm(f, grid, w, 2) == pytest.approx(exact, rel=1e-4)


def test_boundary_norm(small_grid):
    L = small_grid.lattice
    geo = small_grid.geometry
    zero = np.zeros((2, L.size))
    assert diag.boundary_norm(zero, L, geo) == 0.0
    ones = np.ones((2, L.size))
    v1 = L.points[:, 0]
    expected = (np.sum(v1[v1 < 0] * -1) + np.sum(v1[v1 > 0])) * L.cell_volume
    assert diag.boundary_norm(ones, L, geo, p=1) == pytest.approx(expected)
    incoming_only = np.stack([np.where(v1 > 0, 1.0, 0.0), np.where(v1 < 0, 1.0, 0.0)])
    assert diag.boundary_norm(incoming_only, L, geo, side="+") == 0.0
    assert diag.boundary_norm(incoming_only, L, geo, side="-") > 0.0


def test_decay_fit_exact():
    t = np.linspace(0, 10, 101)
    fit = diag.decay_fit(t, 2 * np.exp(-0.5 * t ** (1 / 3)), 1 / 3)
    assert fit.amplitude == pytest.approx(2.0, rel=1e-10)
    assert fit.lambda_hat == pytest.approx(0.5, rel=1e-10)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-10)


def test_decay_fit_noise():
    rng = np.random.default_rng(7)
    t = np.linspace(0, 10, 201)
    y = 2 * np.exp(-0.5 * t ** (1 / 3)) * (1 + 0.01 * rng.normal(size=t.size))
    assert diag.decay_fit(t, y, 1 / 3).lambda_hat == pytest.approx(0.5, abs=0.05)


def test_decay_fit_constant_and_errors():
    t = np.linspace(0, 1, 10)
    assert diag.decay_fit(t, np.full(10, 3.0), 1 / 3).lambda_hat == 0.0
    with pytest.raises(NonPositiveSeries):
        diag.decay_fit(t, np.zeros(10), 1 / 3)


@given(st.floats(0.1, 5), st.floats(0.05, 2))
def test_decay_fit_recovers_parameters(A, lam):
    t = np.linspace(0, 8, 40)
    fit = diag.decay_fit(t, A * np.exp(-lam * t ** 0.4), 0.4)
    assert fit.lambda_hat == pytest.approx(lam, rel=1e-8)


def test_pbeta_admissibility():
    with pytest.raises(InvalidPBeta):
        diag.PBeta(4.0, 0.3).check()
    assert "Eq. p-beta strict inequality" in diag.PBeta(4.0, 0.5).violations()
    assert diag.PBeta().violations() == []


def test_alpha_derivative_norm(small_grid):
    wp = WeightParams()
    w = weight(0.0, small_grid.lattice.points, wp)
    const = np.full(small_grid.shape, 0.3)
    assert diag.alpha_weighted_derivative_norm(const, small_grid, w=w, t=1.0) == pytest.approx(0.0, abs=1e-12)
    lin = small_grid.x[:, None] * np.ones(small_grid.shape)
    a = diag.alpha_weighted_derivative_norm(lin, small_grid, w=w, t=1.0)
    b = diag.alpha_weighted_derivative_norm(3 * lin, small_grid, w=w, t=1.0)
    assert np.isfinite(a) and b == pytest.approx(3 * a, rel=1e-10)
    with pytest.raises(InvalidPBeta):
        diag.alpha_weighted_derivative_norm(lin, small_grid, p=4.0, beta=0.3, w=w, t=1.0)


def test_alpha_slab_range(small_grid):
    alpha = diag.alpha_slab(small_grid, 1.0)
    assert alpha.shape == (small_grid.nx, small_grid.lattice.n)
    assert np.all(alpha > 0) and np.all(alpha <= max(1.0, small_grid.lattice.vmax))


@pytest.fixture(scope="module")
def op_table():
    op = CollisionOperator(VelocityLattice(8, 6.0))
    return op, KernelTable.build(op.lattice, op.params, op)


def test_coercivity_probe_null_space(op_table):
    op, table = op_table
    V = op.lattice.points
    for f in (op.sqmu.ravel(), V[:, 0] * op.sqmu.ravel()):
        pr = diag.coercivity_probe(f, op, table, conservative=True)
        assert pr.rhs == pytest.approx(0.0, abs=1e-12)
        assert abs(pr.lhs) < 1e-8


def test_coercivity_random_orthogonal(op_table, rng):
    op, table = op_table
    ratios = []
    for _ in range(10):
        f = rng.normal(size=op.lattice.size) * op.sqmu.ravel() ** 0.5
        ratios.append(diag.coercivity_probe(f, op, table, conservative=True).ratio)
    assert min(ratios) > 0


def test_nu_tilde_structure_margin():
    res = diag.nu_tilde_structure(np.linspace(0, 5, 6), np.logspace(-2, 3, 200), WeightParams(),
                                  CollisionParams(), 0.0)
    assert res.margin >= 0 and res.c_gamma > 0


def test_norm_report_zero(small_grid):
    rep = diag.norm_report(small_grid.zeros(), small_grid, 0.0, WeightParams())
    assert all(v == 0.0 for v in rep.as_dict().values() if isinstance(v, float))
