"""Command line: ``vpbsim run|validate <config>`` and ``vpbsim report <csv>``.

Exit codes: 0 ok, 2 bad configuration or input, 3 an invariant failed,
4 any other runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import checks
from .config import RunConfig, Scenario, load_config
from .diagnostics import decay_fit, weighted_norm
from .errors import (AdmissibilityError, CompatibilityViolated, InvalidParams, MalformedHistory,
                     NonPositiveSeries, ParseError, SmallnessViolated, VPBError)
from .solver import (HISTORY_COLUMNS, BoundaryDatum, DistributionField, RunHistory,
                     Simulator, relax_homogeneous, run_simulation, save_snapshot)
from .weights import field_smallness, sqrt_maxwellian, weight

log = logging.getLogger("vpbsim")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_RUNTIME = 0, 2, 3, 4
ZERO_TOL = 1e-12
RESIDUAL_COLUMNS = ("mass_residual", "energy_identity_residual", "flux_residual")


# ---------------------------------------------------------------- data

def initial_perturbation(grid, size: float, weights, rng) -> np.ndarray:
    """Smooth data vanishing near both faces, random mode phases, ||w f0||_inf = size."""
    x = grid.x[:, None] / grid.geometry.size
    V = grid.lattice.points
    ph = rng.uniform(0.0, 2.0 * np.pi, 3)
    amp = rng.uniform(0.25, 0.75, 3)
    prof = (1.0 + amp[0] * np.cos(2.0 * np.pi * x + ph[0]) * V[:, 0]
            + amp[1] * np.cos(4.0 * np.pi * x + ph[1]) * V[:, 1]
            + amp[2] * np.cos(2.0 * np.pi * x + ph[2]) * (grid.lattice.speed2 - 3.0) / 3.0)
    f = np.sin(np.pi * x) ** 4 * prof * sqrt_maxwellian(V)
    if size == 0.0:
        return np.zeros(grid.shape)
    return f * size / np.max(np.abs(weight(0.0, V, weights) * f))


def boundary_of(cfg: RunConfig) -> BoundaryDatum:
    if cfg.boundary == "compatible":
        return BoundaryDatum.compatible()
    if cfg.boundary == "maxwellian":
        return BoundaryDatum.maxwellian_inflow(cfg.boundary_amplitude, cfg.boundary_decay, cfg.rho)
    return BoundaryDatum.zero()


# ---------------------------------------------------------------- scenarios

def _simulator(cfg: RunConfig, grid=None) -> Simulator:
    return Simulator(grid or cfg.grid, cfg.collision, cfg.solver)


def _field_summary(hist: RunHistory, cfg: RunConfig) -> dict:
    t = hist.column("t")
    g = hist.column("grad_phi_sup")
    return {"field_lambda": cfg.field_lambda,
            "field_smallness": field_smallness(t, g, cfg.rho, cfg.field_lambda),
            "max_grad_phi": float(np.max(g)) if g.size else 0.0}


def _residual_maxima(hist: RunHistory) -> dict:
    return {c: float(np.nanmax(np.abs(hist.column(c)))) if hist.rows else 0.0 for c in RESIDUAL_COLUMNS}


def _snapshots(hist: RunHistory, cfg: RunConfig, out: Path, grid) -> list:
    paths = []
    for k, (t, f, field) in enumerate(hist.snapshots):
        p = out / f"snapshot_{k:05d}.bin"
        save_snapshot(p, f, field, grid, t, {"scenario": cfg.scenario.value, "seed": cfg.seed},
                      run_id=f"{cfg.scenario.value}-{cfg.seed}")
        paths.append(p.name)
    return paths


def scenario_equilibrium(cfg, rng, out):
    grid = cfg.grid
    hist = run_simulation(DistributionField.zeros(grid), BoundaryDatum.zero(), cfg.solver,
                          sim=_simulator(cfg), snapshot_every=cfg.snapshot_every)
    worst = max(float(np.max(np.abs(hist.column(c)))) for c in HISTORY_COLUMNS[1:])
    inv = {"all norms and residuals <= 1e-12": worst <= ZERO_TOL}
    return hist, {"max_norm_or_residual": worst, **_residual_maxima(hist)}, inv, grid


def scenario_relaxation(cfg, rng, out):
    grid = cfg.grid
    sim = _simulator(cfg)
    V = grid.lattice.points
    f0 = checks.smooth_bounded_profile(grid.lattice, rng) * sqrt_maxwellian(V)
    f0 *= cfg.initial_size / np.max(np.abs(weight(0.0, V, cfg.weights) * f0))
    hist = relax_homogeneous(f0, sim, cfg.solver)
    l2 = hist.column("l2")
    inv = {"moments conserved to 1e-10": hist.summary["max_moment_drift"] <= 1e-10,
           "non-hydrodynamic part decreases": bool(l2[-1] < l2[0])}
    return hist, dict(hist.summary), inv, grid


def scenario_slab(cfg, rng, out, boundary=None):
    grid = cfg.grid
    f0 = initial_perturbation(grid, cfg.initial_size, cfg.weights, rng)
    boundary = boundary_of(cfg) if boundary is None else boundary
    hist = run_simulation(DistributionField(f0, 0.0, grid), boundary, cfg.solver, sim=_simulator(cfg),
                          snapshot_every=cfg.snapshot_every)
    summary = {**hist.summary, **_field_summary(hist, cfg), **_residual_maxima(hist)}
    inv = {"weighted norm stays below M": bool(np.max(hist.column("sup_w")) <= cfg.solver.smallness_M),
           "bounded by M up to t_hat": hist.summary["local_bound_holds"]}
    return hist, summary, inv, grid


def scenario_decay(cfg, rng, out):
    hist, summary, inv, grid = scenario_slab(cfg, rng, out, BoundaryDatum.zero())
    fit = decay_fit(hist.column("t"), hist.column("sup_w"), cfg.rho)
    summary["decay_fit"] = fit.as_dict()
    inv["lambda_hat > 0"] = fit.lambda_hat > 0
    inv["R^2 >= 0.9"] = fit.r_squared >= 0.9
    return hist, summary, inv, grid


def scenario_invariants(cfg, rng, out):
    inv, table = {}, {}
    for name, fn in checks.INVARIANT_SUITE.items():
        res = fn()
        print(f"  {res.line()}")
        inv[name] = res.passed
        table[name] = {"passed": res.passed, "detail": res.detail, "seconds": res.seconds,
                       **{k: v for k, v in res.metrics.items() if np.isscalar(v)}}
    with open(out / "invariants.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["check", "passed", "detail"])
        for name, r in table.items():
            wr.writerow([name, r["passed"], r["detail"]])
    return None, {"invariants": table}, inv, cfg.grid


def scenario_stability(cfg, rng, out):
    grid = cfg.grid
    sim = _simulator(cfg)
    sc = cfg.solver
    f0 = initial_perturbation(grid, cfg.initial_size, cfg.weights, rng)
    eta = (np.sin(np.pi * grid.x[:, None] / grid.geometry.size) ** 4 * rng.uniform(-1.0, 1.0, grid.shape)
           * sqrt_maxwellian(grid.lattice.points))

    def dist(a, b, t):
        return weighted_norm(a - b, grid, weight(t, grid.lattice.points, sc.weights), 1.0 + sc.delta)

    unit = dist(eta, 0.0, 0.0)
    base = run_simulation(DistributionField(f0, 0.0, grid), BoundaryDatum.zero(), sc, sim=sim, snapshot_every=1)
    consts, finals = {}, {}
    for d in cfg.distances:
        other = run_simulation(DistributionField(f0 + eta * d / unit, 0.0, grid), BoundaryDatum.zero(), sc,
                               sim=sim, snapshot_every=1)
        ratios = [dist(a[1], b[1], a[0]) / d for a, b in zip(base.snapshots, other.snapshots)]
        consts[repr(d)] = max(ratios)
        finals[repr(d)] = ratios[-1]
    spread = 0.0
    for vals in (list(consts.values()), list(finals.values())):
        if vals:
            spread = max(spread, max(vals) / min(vals) - 1.0)
    base.snapshots = base.snapshots[::cfg.snapshot_every] if cfg.snapshot_every else []
    summary = {**base.summary, "stability_constants": consts, "final_ratios": finals,
               "relative_spread": spread}
    return base, summary, {"same constant within 50%": spread <= 0.5}, grid


SCENARIOS = {
    Scenario.EQUILIBRIUM: scenario_equilibrium,
    Scenario.HOMOGENEOUS_RELAXATION: scenario_relaxation,
    Scenario.SLAB_INFLOW: scenario_slab,
    Scenario.DECAY_STUDY: scenario_decay,
    Scenario.INVARIANT_SUITE: scenario_invariants,
    Scenario.STABILITY_PAIR: scenario_stability,
}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    return x


def run_scenario(cfg: RunConfig, out_dir=None) -> int:
    """Run the configured scenario and write history.csv, summary.json and snapshots.

    Returns the exit status: 0 when every invariant holds, 3 otherwise.
    """
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    if not out.is_dir():
        raise ParseError(f"output directory {out} does not exist")
    print(cfg.header())
    rng = np.random.default_rng(cfg.seed)
    hist, summary, inv, grid = SCENARIOS[cfg.scenario](cfg, rng, out)
    files = []
    if hist is not None:
        hist.write_csv(out / "history.csv")
        files.append("history.csv")
        files += _snapshots(hist, cfg, out, grid)
    doc = {"scenario": cfg.scenario.value, "seed": cfg.seed, "rho": cfg.rho, "config": cfg.raw,
           "summary": summary, "invariants": inv, "passed": all(inv.values()), "files": files}
    (out / "summary.json").write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    for name, ok in inv.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if all(inv.values()) else EXIT_INVARIANT


# ---------------------------------------------------------------- report

def read_history(path) -> dict:
    """Columns of a history CSV as float arrays; MalformedHistory if truncated or inconsistent."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise MalformedHistory(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise MalformedHistory(f"{path}: empty file")
    head = rows[0]
    missing = [c for c in HISTORY_COLUMNS if c not in head]
    if missing:
        raise MalformedHistory(f"{path}: missing columns {missing}")
    if len(rows) < 2:
        raise MalformedHistory(f"{path}: no data rows")
    data = []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(head):
            raise MalformedHistory(f"{path}: line {i} has {len(r)} fields, expected {len(head)}")
        try:
            data.append([float(v) for v in r])
        except ValueError as exc:
            raise MalformedHistory(f"{path}: line {i}: {exc}") from exc
    arr = np.array(data)
    return {c: arr[:, k] for k, c in enumerate(head)}


def report(path, rho: float = 1.0 / 3.0) -> dict:
    """Decay fit of sup_w and the residual maxima of a run history."""
    cols = read_history(path)
    t, y = cols["t"], cols["sup_w"]
    if np.all(y == 0.0):
        fit = {"status": "undefined", "reason": "all-zero series", "lambda_hat": None, "r_squared": None}
    else:
        try:
            fit = {"status": "ok", **decay_fit(t, y, rho).as_dict()}
        except (NonPositiveSeries, InvalidParams) as exc:
            fit = {"status": "undefined", "reason": str(exc), "lambda_hat": None, "r_squared": None}
    maxima = {c: float(np.nanmax(np.abs(cols[c]))) if c in cols and np.any(np.isfinite(cols[c])) else 0.0
              for c in RESIDUAL_COLUMNS}
    return {"rows": int(t.size), "t_final": float(t[-1]), "decay_fit": fit, "residual_maxima": maxima,
            "sup_w_initial": float(y[0]), "sup_w_final": float(y[-1])}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vpbsim", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=None, help="override run.seed")
    ap.add_argument("--threads", type=int, default=None, help="numba worker threads")
    ap.add_argument("--out-dir", type=Path, default=None, help="existing output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the configured scenario")
    p.add_argument("config", type=Path)
    p = sub.add_parser("validate", help="check a config and print the resolved header")
    p.add_argument("config", type=Path)
    p = sub.add_parser("report", help="aggregate a history CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--rho", type=float, default=1.0 / 3.0)
    return ap


def _set_threads(n):
    if n is None:
        return
    import numba
    if not 1 <= n <= numba.config.NUMBA_NUM_THREADS:
        raise ParseError(f"--threads must be in [1, {numba.config.NUMBA_NUM_THREADS}]")
    numba.set_num_threads(n)


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        _set_threads(args.threads)
        if args.out_dir is not None and not args.out_dir.is_dir():
            raise ParseError(f"output directory {args.out_dir} does not exist")
        if args.command == "validate":
            print(_load(args).header())
            print("config OK")
            return EXIT_OK
        if args.command == "report":
            doc = report(args.csv, args.rho)
            text = json.dumps(_jsonable(doc), indent=2, sort_keys=True)
            if args.out_dir is not None:
                (args.out_dir / "report.json").write_text(text + "\n")
            print(text)
            return EXIT_OK
        return run_scenario(_load(args), args.out_dir)
    except AdmissibilityError as exc:
        for c in exc.conditions:
            print(f"admissibility violated: {c}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, MalformedHistory) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SmallnessViolated, CompatibilityViolated) as exc:
        print(f"invariant failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (VPBError, ArithmeticError, ValueError, MemoryError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
