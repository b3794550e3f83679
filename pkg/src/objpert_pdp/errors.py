"""Exception types.

Errors fall into two families so the CLI can map them to exit codes:
``NumericFailure`` (exit 2) and ``PreconditionFailure`` (exit 3).
"""

from __future__ import annotations


class PdpError(Exception):
    """Base class for every error raised by this package."""


class NumericFailure(PdpError):
    """A computation broke down numerically."""


class PreconditionFailure(PdpError):
    """Inputs violate a documented requirement."""


class DimensionMismatch(PreconditionFailure, ValueError):
    pass


class NotPositiveDefinite(NumericFailure):
    pass


class NonConvergence(NumericFailure):
    pass


class LogDomain(NumericFailure):
    """Argument of a log(1 - a) or log(1 + a) term is not positive."""


class NonPsdHessian(NumericFailure):
    pass


class InfinitePrivacyLoss(NumericFailure):
    """Zero noise with a nonzero sensitivity."""


class BoundDomain(NumericFailure):
    """A data-independent bound is undefined because lambda is too small."""


class UnboundedGradient(PreconditionFailure):
    """The loss has no finite gradient bound, so worst-case DP is impossible."""


class LambdaTooSmall(PreconditionFailure):
    pass


class MonteCarloTailTooDeep(PreconditionFailure):
    pass


class NotAMember(PreconditionFailure):
    """A removal was requested for a point that is not in the dataset."""
