import json

import pytest

from vpbsim.cli import main, read_history, report
from vpbsim.config import Scenario, load_config, parse_config
from vpbsim.errors import AdmissibilityError, MalformedHistory, ParseError

SMALL = """
[domain]
nx = 8
[collision]
lattice = 8
[solver]
dt = 0.01
t_end = 0.05
[run]
scenario = {scenario}
seed = 7
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_are_admissible():
    cfg = parse_config("")
    assert cfg.scenario is Scenario.EQUILIBRIUM
    assert cfg.rho == pytest.approx(1.0 / 3.0)
    assert "# rho = 0.333" in cfg.header()
    assert "# solver.dt = 0.01" in cfg.header()


def test_weight_admissibility_is_named():
    with pytest.raises(AdmissibilityError) as exc:
        parse_config("[weights]\ntheta = 2.0\n")
    assert "theta*gamma+2>0" in exc.value.conditions


def test_all_violations_are_listed():
    with pytest.raises(AdmissibilityError) as exc:
        parse_config("[weights]\ntheta = 2.0\n[diagnostics]\nbeta = 0.5\n[collision]\nepsilon = 0\n")
    conds = exc.value.conditions
    assert "theta*gamma+2>0" in conds and "epsilon>0" in conds
    assert any("p-beta" in c for c in conds)


@pytest.mark.parametrize("text", ["[domain\nnx = 4\n", "[domain]\nnx = four\n", "[domain]\ncolour = red\n",
                                  "[extra]\nx = 1\n", "[run]\nscenario = nope\n"])
def test_malformed_configs(text):
    with pytest.raises(ParseError):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ParseError):
        load_config(tmp_path / "absent.ini")


def test_exit_codes_for_bad_input(tmp_path, capsys):
    assert main(["validate", str(write(tmp_path, "[weights]\ntheta = 2.0\n"))]) == 2
    assert "theta*gamma+2>0" in capsys.readouterr().err
    assert main(["validate", str(write(tmp_path, "[domain\n"))]) == 2
    good = write(tmp_path, SMALL.format(scenario="equilibrium"), "good.ini")
    assert main(["--out-dir", str(tmp_path / "missing"), "run", str(good)]) == 2
    assert main(["--threads", "0", "validate", str(good)]) != 0


def test_equilibrium_run_and_report(tmp_path, capsys):
    cfg = write(tmp_path, SMALL.format(scenario="equilibrium"))
    assert main(["--out-dir", str(tmp_path), "run", str(cfg)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["passed"] and summary["seed"] == 7
    cols = read_history(tmp_path / "history.csv")
    assert cols["sup_w"].max() == 0.0
    rep = report(tmp_path / "history.csv")
    assert rep["decay_fit"]["status"] == "undefined"
    capsys.readouterr()
    assert main(["report", str(tmp_path / "history.csv")]) == 0
    assert '"undefined"' in capsys.readouterr().out


def test_truncated_history(tmp_path):
    cfg = write(tmp_path, SMALL.format(scenario="slab-inflow"))
    assert main(["--out-dir", str(tmp_path), "run", str(cfg)]) == 0
    lines = (tmp_path / "history.csv").read_text().splitlines()
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines[:-1] + [lines[-1][: len(lines[-1]) // 2]]) + "\n")
    with pytest.raises(MalformedHistory):
        read_history(bad)
    assert main(["report", str(bad)]) == 2


def test_same_seed_is_byte_identical(tmp_path):
    cfg = write(tmp_path, SMALL.format(scenario="slab-inflow"))
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        assert main(["--out-dir", str(d), "run", str(cfg)]) == 0
        outs.append((d / "history.csv").read_bytes())
    assert outs[0] == outs[1]


def test_homogeneous_relaxation_scenario(tmp_path):
    cfg = write(tmp_path, SMALL.format(scenario="homogeneous-relaxation"))
    assert main(["--out-dir", str(tmp_path), "run", str(cfg)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["summary"]["max_moment_drift"] < 1e-10
