"""Run configuration: an INI file with one section per module.

Every key has a default, so an empty file is a valid equilibrium run. All
admissibility conditions are checked at load time and reported together.
"""

from __future__ import annotations

import configparser
import enum
from dataclasses import dataclass, field
from pathlib import Path

from .collision import CollisionParams
from .diagnostics import PBeta
from .domain import DomainGeometry
from .errors import AdmissibilityError, InvalidParams, ParseError
from .lattice import PhaseGrid, VelocityLattice
from .solver import SolverConfig
from .weights import WeightParams


class Scenario(str, enum.Enum):
    EQUILIBRIUM = "equilibrium"
    HOMOGENEOUS_RELAXATION = "homogeneous-relaxation"
    SLAB_INFLOW = "slab-inflow"
    DECAY_STUDY = "decay-study"
    INVARIANT_SUITE = "invariant-suite"
    STABILITY_PAIR = "stability-pair"


DEFAULTS = {
    "domain": {"kind": "slab", "length": "1.0", "radius": "1.0", "nx": "64"},
    "weights": {"vartheta": "0.01", "theta": "1.0", "gamma": "-1.0"},
    "collision": {"epsilon": "0.01", "sphere_nodes": "26", "vmax": "6.0", "lattice": "16", "b0_cap": "1.0"},
    "solver": {"dt": "0.01", "t_end": "1.0", "picard_tol": "1e-10", "picard_max_iter": "30",
               "smallness_m": "1.0", "delta_star": "0.5", "gamma_rel_tol": "1e-2", "compat_tol": "1e-2",
               "poisson": "true"},
    "diagnostics": {"p": "4.0", "beta": "0.6", "delta": "0.1", "varpi": "0.01", "alpha_eps": "0.01",
                    "field_lambda": "1.0"},
    "run": {"scenario": "equilibrium", "seed": "0", "out_dir": ".", "initial_size": "1e-3",
            "boundary": "zero", "boundary_amplitude": "0.0", "boundary_decay": "0.0",
            "snapshot_every": "0", "distances": "1e-3, 1e-4"},
}

BOUNDARY_KINDS = ("zero", "maxwellian", "compatible")


@dataclass(frozen=True)
class RunConfig:
    geometry: DomainGeometry
    nx: int
    weights: WeightParams
    collision: CollisionParams
    lattice: VelocityLattice
    solver: SolverConfig
    pbeta: PBeta
    field_lambda: float
    scenario: Scenario
    seed: int
    out_dir: Path
    initial_size: float
    boundary: str
    boundary_amplitude: float
    boundary_decay: float
    snapshot_every: int
    distances: tuple
    source: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self) -> PhaseGrid:
        return PhaseGrid(self.geometry, self.lattice, self.nx)

    @property
    def rho(self) -> float:
        return self.weights.rho

    def header(self) -> str:
        """Every resolved key, one line each, prefixed with '#'."""
        lines = [f"# vpbsim run: scenario={self.scenario.value} seed={self.seed}",
                 f"# rho = {self.rho!r}"]
        for sec, keys in self.raw.items():
            for k, v in keys.items():
                lines.append(f"# {sec}.{k} = {v}")
        return "\n".join(lines)


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_dict(DEFAULTS)
    return cp


def _num(cp, sec, key, kind, problems):
    raw = cp.get(sec, key)
    try:
        if kind is bool:
            return cp.getboolean(sec, key)
        return kind(float(raw)) if kind is int and "." in raw else kind(raw)
    except ValueError:
        problems.append(f"{sec}.{key}: cannot read {raw!r} as {kind.__name__}")
        return None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = _parser()
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ParseError(f"{source}: {exc}") from exc
    unknown = [f"{s}.{k}" for s in cp.sections() for k in cp[s] if s not in DEFAULTS or k not in DEFAULTS[s]]
    unknown += [s for s in cp.sections() if s not in DEFAULTS]
    if unknown:
        raise ParseError(f"{source}: unknown keys {sorted(set(unknown))}")

    bad = []
    g = lambda s, k, t=float: _num(cp, s, k, t, bad)  # noqa: E731
    vals = {
        "length": g("domain", "length"), "radius": g("domain", "radius"), "nx": g("domain", "nx", int),
        "vartheta": g("weights", "vartheta"), "theta": g("weights", "theta"), "gamma": g("weights", "gamma"),
        "eps": g("collision", "epsilon"), "nodes": g("collision", "sphere_nodes", int),
        "vmax": g("collision", "vmax"), "n": g("collision", "lattice", int), "cap": g("collision", "b0_cap"),
        "dt": g("solver", "dt"), "t_end": g("solver", "t_end"), "ptol": g("solver", "picard_tol"),
        "pmax": g("solver", "picard_max_iter", int), "M": g("solver", "smallness_m"),
        "dstar": g("solver", "delta_star"), "grt": g("solver", "gamma_rel_tol"),
        "ctol": g("solver", "compat_tol"), "poisson": g("solver", "poisson", bool),
        "p": g("diagnostics", "p"), "beta": g("diagnostics", "beta"), "delta": g("diagnostics", "delta"),
        "varpi": g("diagnostics", "varpi"), "aeps": g("diagnostics", "alpha_eps"),
        "flam": g("diagnostics", "field_lambda"),
        "seed": g("run", "seed", int), "size": g("run", "initial_size"),
        "bamp": g("run", "boundary_amplitude"), "bdec": g("run", "boundary_decay"),
        "snap": g("run", "snapshot_every", int),
    }
    try:
        distances = tuple(float(s) for s in cp.get("run", "distances").split(",") if s.strip())
    except ValueError:
        bad.append("run.distances: expected a comma-separated list of numbers")
        distances = ()
    kind = cp.get("domain", "kind").strip().lower()
    if kind not in ("slab", "ball"):
        bad.append(f"domain.kind: {kind!r} is not slab or ball")
    try:
        scenario = Scenario(cp.get("run", "scenario").strip())
    except ValueError:
        bad.append(f"run.scenario: unknown scenario {cp.get('run', 'scenario')!r}")
        scenario = None
    boundary = cp.get("run", "boundary").strip().lower()
    if boundary not in BOUNDARY_KINDS:
        bad.append(f"run.boundary: {boundary!r} is not one of {BOUNDARY_KINDS}")
    if bad:
        raise ParseError(f"{source}: " + "; ".join(bad))

    # admissibility: collect every breached condition before raising
    conds = []
    # bypass __post_init__ so that every weight condition is listed, not just the first
    wp = WeightParams.__new__(WeightParams)
    object.__setattr__(wp, "vartheta", vals["vartheta"])
    object.__setattr__(wp, "theta", vals["theta"])
    object.__setattr__(wp, "gamma", vals["gamma"])
    conds += wp.violations()
    if not conds:
        try:
            wp.rho
        except InvalidParams as exc:
            conds.append(str(exc))
    pb = PBeta(vals["p"], vals["beta"], vals["varpi"])
    conds += pb.violations()
    if not vals["eps"] > 0:
        conds.append("epsilon>0")
    if vals["nx"] < 2:
        conds.append("domain.nx>=2")
    if vals["n"] < 2 or not vals["vmax"] > 0:
        conds.append("velocity lattice n>=2 and vmax>0")
    if not (0.0 < vals["delta"] < 1.0):
        conds.append("0<delta<1")
    if not vals["aeps"] > 0:
        conds.append("alpha epsilon>0")
    if conds:
        raise AdmissibilityError(conds)

    try:
        wp = WeightParams(vals["vartheta"], vals["theta"], vals["gamma"])
        cparams = CollisionParams(vals["gamma"], vals["eps"], vals["nodes"], vals["cap"])
        solver = SolverConfig(dt=vals["dt"], t_end=vals["t_end"], picard_tol=vals["ptol"],
                              picard_max_iter=vals["pmax"], smallness_M=vals["M"], delta_star=vals["dstar"],
                              weights=wp, poisson=vals["poisson"], gamma_rel_tol=vals["grt"],
                              compat_tol=vals["ctol"], alpha_eps=vals["aeps"], p=vals["p"], beta=vals["beta"],
                              delta=vals["delta"], varpi=vals["varpi"])
    except InvalidParams as exc:
        raise AdmissibilityError([str(exc)]) from exc
    geometry = DomainGeometry.slab(vals["length"]) if kind == "slab" else DomainGeometry.ball(vals["radius"])
    raw = {s: dict(cp[s]) for s in DEFAULTS}
    return RunConfig(
        geometry=geometry, nx=vals["nx"], weights=wp, collision=cparams,
        lattice=VelocityLattice(vals["n"], vals["vmax"]), solver=solver, pbeta=pb,
        field_lambda=vals["flam"], scenario=scenario, seed=vals["seed"],
        out_dir=Path(cp.get("run", "out_dir")), initial_size=vals["size"], boundary=boundary,
        boundary_amplitude=vals["bamp"], boundary_decay=vals["bdec"], snapshot_every=vals["snap"],
        distances=distances, source=source, raw=raw)


def load_config(path) -> RunConfig:
    """Read and validate a config file.

    Raises ParseError for a missing or malformed file and
    AdmissibilityError listing every breached condition.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))
