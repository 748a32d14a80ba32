"""Exception types raised across the simulator."""


class VPBError(Exception):
    """Base class for all simulator errors."""


class NotOnBoundary(VPBError):
    """A boundary-only query received a point off the boundary."""


class IntegratorFailure(VPBError):
    """Characteristic integration produced non-finite states."""


class GrazingDegenerate(VPBError):
    """The exit state is grazing, so the boundary Jacobian is singular."""


class InvalidParams(VPBError):
    """Parameters violate an admissibility condition."""


class LatticeMismatch(VPBError):
    """A velocity profile does not match the operator's lattice."""


class SolverDivergence(VPBError):
    """A linear solve failed to reach its residual tolerance."""


class NonPositiveInput(VPBError):
    """An absolute-form iterate has negative entries."""


class SmallnessViolated(VPBError):
    """The weighted sup norm left the small-data regime."""


class CompatibilityViolated(VPBError):
    """Initial data disagree with the boundary datum on the incoming set."""


class NonPositiveSeries(VPBError):
    """A decay fit received a non-positive sample."""


class InvalidPBeta(VPBError):
    """The exponent pair (p, beta) is outside the admissible window."""


class ParseError(VPBError):
    """A configuration file or output path could not be used."""


class AdmissibilityError(VPBError):
    """A configuration breaches a named admissibility condition."""

    def __init__(self, conditions):
        if isinstance(conditions, str):
            conditions = [conditions]
        self.conditions = list(conditions)
        super().__init__("; ".join(self.conditions))


class MalformedHistory(VPBError):
    """A run-history CSV is truncated or has the wrong columns."""


class CFLWarning(UserWarning):
    """A characteristic foot left the lattice hull."""
