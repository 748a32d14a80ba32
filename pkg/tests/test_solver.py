import warnings

import numpy as np
import pytest

from vpbsim.domain import DomainGeometry
from vpbsim.errors import (CFLWarning, CompatibilityViolated, InvalidParams, NonPositiveInput, ParseError,
                           SmallnessViolated)
from vpbsim.field import PotentialField, solve_poisson_slab
from vpbsim.lattice import PhaseGrid, VelocityLattice
from vpbsim.solver import (BoundaryDatum, DistributionField, Representation, Simulator, SolverConfig,
                           boundary_flux_compatibility, compatibility_residual, duhamel_step, flux_coefficients,
                           load_snapshot, local_boundedness, picard_solve, relax_homogeneous, run_simulation, save_snapshot)
from vpbsim.weights import maxwellian, sqrt_maxwellian


@pytest.fixture(scope="module")
def grid():
    return PhaseGrid(DomainGeometry.slab(1.0), VelocityLattice(8, 6.0), 16)


@pytest.fixture(scope="module")
def sim(grid):
    return Simulator(grid, config=SolverConfig(dt=0.01, t_end=0.1))


def bump(grid, size=1e-4):
    V = grid.lattice.points
    return size * np.sin(np.pi * grid.x[:, None]) ** 4 * (1 + 0.5 * V[:, 0]) * sqrt_maxwellian(V)


def test_representation_round_trip(grid, rng):
    f = DistributionField(rng.normal(size=grid.shape) * 1e-3, 0.0, grid)
    F = f.to_absolute()
    assert F.representation is Representation.ABSOLUTE
    np.testing.assert_allclose(F.to_perturbation().values, f.values, atol=1e-15)
    with pytest.raises(InvalidParams):
        DistributionField(np.zeros(3), 0.0, grid)


def test_config_admissibility():
    with pytest.raises(InvalidParams):
        SolverConfig(dt=0.0)
    assert SolverConfig(dt=0.1, t_end=1.0).n_steps == 10


def test_zero_step_is_fixed_point(grid, sim):
    out = duhamel_step(DistributionField.zeros(grid), None, BoundaryDatum.zero(), 0.01, sim)
    assert np.all(out.values == 0) and out.time == pytest.approx(0.01)


def test_pure_transport_and_damping(grid):
    cfg = SolverConfig(dt=0.01, poisson=False)
    s = Simulator(grid, config=cfg, build_table=False)
    s.apply_Kc = lambda f: np.zeros_like(f)
    V = grid.lattice.points
    g = 1e-6 * sqrt_maxwellian(V)
    f = (1.0 + grid.x[:, None]) * g
    new, info = s.step(f, 0.0, BoundaryDatum.zero(), 0.01, PotentialField.zero(grid.x))
    assert not info["gamma_evaluated"]
    expected = np.exp(-s.nu * 0.01) * (1.0 + grid.x[:, None] - 0.01 * V[:, 0]) * g
    interior = (grid.x[:, None] - 0.01 * V[:, 0] > grid.x[0]) & (grid.x[:, None] - 0.01 * V[:, 0] < grid.x[-1])
    rel = np.abs(new - expected)[interior] / np.abs(expected)[interior]
    assert rel.max() < 1e-6


def test_exited_characteristics_take_zero_datum(grid):
    cfg = SolverConfig(dt=0.02, poisson=False)
    s = Simulator(grid, config=cfg, build_table=False)
    s.apply_Kc = lambda f: np.zeros_like(f)
    f = np.tile(1e-6 * sqrt_maxwellian(grid.lattice.points), (grid.nx, 1))
    new, _ = s.step(f, 0.0, BoundaryDatum.zero(), 0.02, PotentialField.zero(grid.x))
    v1 = grid.lattice.points[:, 0]
    out_left = grid.x[:, None] < 0.02 * v1[None, :]
    assert np.all(new[out_left] == 0.0)


def test_picard_maxwellian_drift_is_first_order(grid, sim):
    # Q(mu, mu) is not exactly zero on the lattice, so mu drifts by O(dt) times that residual
    F = DistributionField(np.tile(maxwellian(grid.lattice.points), (grid.nx, 1)), 0.0, grid,
                          Representation.ABSOLUTE)
    q = np.max(np.abs(sim.op.q_full(sim.mu, sim.mu).total))
    drift = []
    for dt in (0.005, 0.0025):
        out, rep = picard_solve(F, None, BoundaryDatum.zero(), dt, sim)
        assert rep.converged
        drift.append(np.max(np.abs(out.values - F.values)))
    assert drift[0] <= 4 * 0.005 * q
    # at least linear in dt; higher-order terms still show at these step sizes
    assert drift[0] / drift[1] >= 1.8


def test_picard_contracts(grid, sim, rng):
    f = bump(grid, 1e-2) * (1 + 0.3 * rng.uniform(-1, 1, grid.shape))
    F = DistributionField(f, 0.0, grid).to_absolute()
    _, rep = picard_solve(F, None, BoundaryDatum.zero(), 0.01, sim)
    r = rep.ratios()
    assert rep.converged and np.all(r[:-1] < 1.0)


def test_picard_rejects_negative(grid, sim):
    F = DistributionField(-np.ones(grid.shape), 0.0, grid, Representation.ABSOLUTE)
    with pytest.raises(NonPositiveInput):
        picard_solve(F, None, BoundaryDatum.zero(), 0.01, sim)


def test_zero_run_stays_zero(grid, sim):
    hist = run_simulation(DistributionField.zeros(grid), BoundaryDatum.zero(), SolverConfig(dt=0.01, t_end=0.05),
                          sim=sim)
    assert len(hist.rows) == 6
    assert np.all(hist.final.values == 0)
    assert np.all(hist.column("grad_phi_sup") == 0)


def test_compatibility_violation(grid, sim):
    f0 = np.tile(1e-3 * sqrt_maxwellian(grid.lattice.points), (grid.nx, 1))
    assert compatibility_residual(f0, BoundaryDatum.zero(), grid) > 0
    with pytest.raises(CompatibilityViolated):
        run_simulation(DistributionField(f0, 0.0, grid), BoundaryDatum.zero(), SolverConfig(t_end=0.01), sim=sim)


def test_smallness_violation(grid, sim):
    f0 = bump(grid, 2.0)
    with pytest.raises(SmallnessViolated):
        run_simulation(DistributionField(f0, 0.0, grid), BoundaryDatum.zero(), SolverConfig(t_end=0.01), sim=sim)


def test_flux_compatibility_examples():
    grid = PhaseGrid(DomainGeometry.slab(1.0), VelocityLattice(24, 8.0), 4)
    sq = sqrt_maxwellian(grid.lattice.points)
    zero = np.zeros(grid.shape)
    np.testing.assert_allclose(boundary_flux_compatibility(zero, BoundaryDatum.zero(), grid, 0.0), 0.0)
    f = np.tile(sq, (grid.nx, 1))
    g = BoundaryDatum.maxwellian_inflow(1.0)
    np.testing.assert_allclose(boundary_flux_compatibility(f, g, grid, 0.0), 0.0, atol=1e-12)
    half = BoundaryDatum.maxwellian_inflow(0.5)
    # the continuum value is 2*pi*(1 - 0.5) per face; the lattice quadrature is within a few percent
    np.testing.assert_allclose(boundary_flux_compatibility(f, half, grid, 0.0), np.pi, rtol=3e-2)


def test_flux_coefficients_balance(grid, rng):
    f = bump(grid, 1e-3) * rng.uniform(0.5, 1.5, grid.shape)
    b = BoundaryDatum.compatible()
    b.set_flux_coefficients(flux_coefficients(f, grid))
    np.testing.assert_allclose(boundary_flux_compatibility(f, b, grid, 0.0), 0.0, atol=1e-15)


def test_cfl_warning(grid):
    s = Simulator(grid, config=SolverConfig(dt=0.01), build_table=False)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        s._lookup((np.zeros((grid.nx + 2, grid.lattice.size)),), np.full((grid.nx, grid.lattice.n), 0.5),
                  np.full((grid.nx, grid.lattice.n), 100.0))
    assert any(issubclass(r.category, CFLWarning) for r in rec)


def test_history_csv_is_reproducible(tmp_path, grid, sim):
    cfg = SolverConfig(dt=0.01, t_end=0.05)
    a = run_simulation(DistributionField(bump(grid), 0.0, grid), BoundaryDatum.zero(), cfg, sim=sim)
    b = run_simulation(DistributionField(bump(grid), 0.0, grid), BoundaryDatum.zero(), cfg, sim=sim)
    pa, pb = a.write_csv(tmp_path / "a.csv"), b.write_csv(tmp_path / "b.csv")
    assert pa.read_bytes() == pb.read_bytes()


def test_snapshot_round_trip(tmp_path, grid, rng):
    f = rng.normal(size=grid.shape)
    fld = solve_poisson_slab(rng.normal(size=grid.nx), 1.0)
    p = save_snapshot(tmp_path / "s.bin", f, fld, grid, 0.5, {"k": 1})
    head, data = load_snapshot(p)
    assert head["time"] == 0.5
    np.testing.assert_array_equal(data["f"], f)
    np.testing.assert_array_equal(data["phi"], fld.phi)
    raw = bytearray(p.read_bytes())
    raw[-1] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(ParseError):
        load_snapshot(p)


def test_homogeneous_relaxation_conserves(grid, sim, rng):
    f0 = 1e-2 * rng.uniform(-1, 1, grid.lattice.size) * sqrt_maxwellian(grid.lattice.points)
    hist = relax_homogeneous(f0, sim, SolverConfig(dt=0.05, t_end=0.5))
    assert hist.summary["max_moment_drift"] < 1e-12
    l2 = hist.column("l2")
    assert l2[-1] < 0.5 * l2[0]


def test_local_boundedness_reading():
    t = np.linspace(0.0, 1.0, 11)
    grow = local_boundedness(t, 0.1 * np.exp(0.5 * t), M=1.0)
    assert grow["step_constant"] == pytest.approx(0.5)
    assert grow["t_hat"] == pytest.approx(1.0) and grow["local_bound_holds"]
    flat = local_boundedness(t, 0.1 * np.exp(-t), M=1.0)
    assert flat["step_constant"] == 0.0 and flat["t_hat"] == np.inf
    # slow first step, then a blow-up before the implied clock runs out
    late = 0.4 * np.exp(0.1 * t + 5.0 * np.clip(t - 0.3, 0.0, None))
    assert not local_boundedness(t, late, M=1.0)["local_bound_holds"]


def test_run_reports_local_clock(grid, sim):
    hist = run_simulation(DistributionField(bump(grid, 1e-3), 0.0, grid), BoundaryDatum.zero(),
                          SolverConfig(dt=0.01, t_end=0.05), sim=sim)
    s = hist.summary
    assert s["local_bound_applies"] and s["local_bound_holds"]
    assert s["t_hat"] > 0


def test_picard_increments_scale_with_data(grid, sim, rng):
    # contraction: shrinking the data shrinks every Picard increment proportionally
    shape = bump(grid, 1.0) * (1 + 0.3 * rng.uniform(-1, 1, grid.shape))
    incs = []
    for a in (1e-2, 5e-3):
        F = DistributionField(a * shape, 0.0, grid).to_absolute()
        _, rep = picard_solve(F, None, BoundaryDatum.zero(), 0.01, sim)
        incs.append(np.asarray(rep.increments[:3]))
    np.testing.assert_allclose(incs[1] / incs[0], 0.5, rtol=0.1)
