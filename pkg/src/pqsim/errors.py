"""Exception hierarchy shared by the simulation and estimation modules."""


class PQSError(Exception):
    """Base class for runtime and numerical failures."""


class ConfigError(PQSError, ValueError):
    """Invalid or unreadable experiment configuration."""


class SaturationError(PQSError, ValueError):
    """Polarimeter ratio outside [-1, 1]."""


class InvalidReferenceError(PQSError, ValueError):
    """Non-positive reference Stokes signal."""


class FitError(PQSError):
    """Nonlinear fit did not converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RankDeficiencyError(FitError):
    """Classical parameters are not identifiable from the data."""


class IdentifiabilityError(PQSError):
    """Spin components are not identifiable from a measurement window."""


class ConditioningError(PQSError):
    """Covariance of the first estimate cannot be inverted."""


class UndefinedCoherenceError(PQSError, ValueError):
    """Zero in-plane coherence (or zero atom number) in a normalisation."""


class DivergentSensitivityError(PQSError, ArithmeticError):
    """Phase sensitivity diverges because d<F_z>/dphi vanishes."""


class TraceParseError(PQSError):
    """Malformed trace CSV."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
