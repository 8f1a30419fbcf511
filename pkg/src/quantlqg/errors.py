"""Exception hierarchy shared by all quantlqg modules."""


class QuantLqgError(Exception):
    """Base class for every error raised by this package."""


class NotStabilizable(QuantLqgError):
    """(A, B) has an uncontrollable eigenvalue on or outside the unit circle."""


class NoConvergence(QuantLqgError):
    """An iterative solver hit its iteration cap before meeting tolerance."""


class NotOrdered(QuantLqgError):
    """A matrix pair violates the required semidefinite ordering."""


class Singular(QuantLqgError):
    """A matrix that must be inverted is numerically singular."""


class UnstableFilter(QuantLqgError):
    """The synthesized estimator recursion has spectral radius >= 1."""


class Infeasible(QuantLqgError):
    """The requested cost budget is at or below the hard floor."""


class DegeneratePi(QuantLqgError):
    """Distortion covariance is singular; its log-determinant is undefined."""


class NonFinite(QuantLqgError):
    """An input or intermediate value is NaN or infinite."""


class EmptyHistogram(QuantLqgError):
    """A histogram with no counts cannot define a distribution."""


class BadParameter(QuantLqgError):
    """A scalar parameter lies outside its documented range."""


class PrecisionExhausted(QuantLqgError):
    """Codeword construction exceeded the working-precision cap."""


class MalformedCodeword(QuantLqgError):
    """A bit string does not decode to any symbol under the active code."""


class DesyncDetected(QuantLqgError):
    """Encoder and decoder filter states stopped agreeing bit-for-bit."""


class DegenerateCoder(QuantLqgError):
    """The sensitivity matrix carries no information (all-zero rows)."""


class InsufficientWarmup(QuantLqgError):
    """Warm-up horizon does not clear the estimated mixing time."""


class ParseError(QuantLqgError):
    """A config or data file is syntactically or structurally invalid."""


class DimensionMismatch(QuantLqgError):
    """Declared dimensions disagree with the supplied array lengths."""


class ValueOutOfRange(QuantLqgError):
    """A config value violates its documented bounds."""
