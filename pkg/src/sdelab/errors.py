"""Exception taxonomy shared by all modules.

The CLI maps these onto exit codes: validation problems exit with 2,
numeric failures (quadrature, convergence, divergent moments, range
violations) with 3, and diagnostic failures reported inside an otherwise
successful run with 1.
"""


class SdeLabError(Exception):
    """Base class for all package errors."""


class ValidationError(SdeLabError):
    """A scenario or configuration failed pre-run validation."""


class NonConvergent(SdeLabError):
    """Consecutive mollification levels did not stabilise."""


class QuadratureFailure(SdeLabError):
    """Adaptive integration could not reach the requested tolerance."""


class RangeError(SdeLabError):
    """A query fell outside the tabulated range of a transform."""


class DivergentMoment(SdeLabError):
    """A jump-kernel moment integral is not finite for the given exponent."""


class IntensityBoundViolated(SdeLabError):
    """A thinning acceptance probability exceeded one."""


class DegenerateWeights(SdeLabError):
    """Importance weights have an effective sample size too small to use."""


class GridMismatch(SdeLabError):
    """A window width or evaluation time is not aligned with the time grid."""


class MissingDriverRecord(SdeLabError):
    """An ensemble lacks the noise/jump records required for reconstruction."""


class IoError(SdeLabError):
    """Report emission failed."""
