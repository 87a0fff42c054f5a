"""Exception and warning types raised across the package."""


class FeqrError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(FeqrError, ValueError):
    pass


class DegenerateDesign(FeqrError):
    """The design is rank deficient once the unit intercepts are accounted for."""


class NotConverged(FeqrError):
    pass


class NotConvergedWarning(RuntimeWarning):
    pass


class InsufficientReplicates(FeqrError):
    pass


class NonpositiveSE(FeqrError):
    pass


class NegativeDiagonal(FeqrError):
    pass


class SingularRestriction(FeqrError):
    pass


class SingularGamma(FeqrError):
    pass


class ZeroKernelMass(FeqrError):
    pass


class BootstrapFailure(FeqrError):
    """Too many bootstrap replicates failed to converge."""


class UnbalancedPanel(FeqrError):
    def __init__(self, message, units=()):
        super().__init__(message)
        self.units = list(units)


class DuplicateCell(FeqrError):
    pass


class NonPositiveLog(FeqrError):
    pass


class ParseError(FeqrError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class ZeroQuadraticTerm(FeqrError):
    pass


class RepError(FeqrError):
    """A Monte Carlo rep failed; carries the rep index and quantile level."""

    def __init__(self, message, rep=None, tau=None):
        super().__init__(message)
        self.rep = rep
        self.tau = tau
