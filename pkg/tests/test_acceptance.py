"""Acceptance criteria, each run at its stated tolerance.

Every criterion prints a single PASS/FAIL line; the lines are repeated in the
terminal summary so they appear even without ``-s``.
"""

import pytest

from vpbsim import checks

CRITERIA = [
    ("collision conservation", checks.check_conservation),
    ("Maxwellian null space", checks.check_maxwellian),
    ("k2 pointwise bound", checks.check_k2_bound),
    ("K(1-chi) epsilon scaling", checks.check_kwh_scaling),
    ("Gamma bound", checks.check_gamma_bound),
    ("alpha invariance", checks.check_alpha_invariance),
    ("boundary Jacobian", checks.check_jacobian),
    ("nu-tilde lower bound", checks.check_nu_tilde),
    ("equilibrium preservation", checks.check_equilibrium),
    ("stretched-exponential decay", checks.check_decay),
    ("positivity", checks.check_positivity),
    ("L^(1+delta) stability", checks.check_stability),
    ("energy identity convergence", checks.check_energy_identity),
]


@pytest.mark.acceptance
@pytest.mark.slow
@pytest.mark.parametrize("label,check", CRITERIA, ids=[c[0] for c in CRITERIA])
def test_criterion(label, check, acceptance_log):
    result = check()
    line = f"{'PASS' if result.passed else 'FAIL'} [{label}] {result.detail} ({result.seconds:.1f}s)"
    print(line)
    acceptance_log.append(line)
    assert result.passed, line
