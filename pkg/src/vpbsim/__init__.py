"""Vlasov-Poisson-Boltzmann simulator for soft potentials with in-flow boundary data.

Subpackages and modules:

- ``domain`` and ``kinematics``: convex domains, backward exits and the alpha weight
- ``weights``: time-dependent exponential velocity weights
- ``collision``: the cut-off soft-potential operator and its kernel decomposition
- ``field``: Poisson solves for the self-consistent potential
- ``solver``: the mild-form time stepper and run histories
- ``diagnostics``: decay fits, stability distances and operator probes
- ``checks``: numerical verification of the analytical estimates
- ``cli``: the ``vpbsim`` command
"""

__version__ = "0.1.0"
