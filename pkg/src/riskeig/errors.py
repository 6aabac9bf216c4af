"""Exception taxonomy.

Every failure the library can signal deliberately derives from RiskeigError,
so callers (and the CLI exit-code mapping) can separate expected numerical
failures from genuine bugs.
"""


class RiskeigError(Exception):
    """Base class for all library errors."""

    def __init__(self, message, payload=None):
        super().__init__(message)
        # carries partial results (last iterate, candidate policies, partial
        # sweep rows) so callers can inspect what was computed before failure
        self.payload = payload


class InvalidModelError(RiskeigError):
    """Model coefficients evaluated to NaN/non-finite or violate structure."""


class CatalogError(RiskeigError):
    """Unknown builtin model name or malformed model config."""


class ResourceError(RiskeigError):
    """Requested grid exceeds the configured node cap."""


class MonotonicityError(RiskeigError):
    """Discretization would lose the nonnegative-off-diagonal structure."""


class ConvergenceError(RiskeigError):
    """Iteration budget exhausted before reaching tolerance."""


class EstimatorUndefinedError(RiskeigError):
    """No usable paths remain (e.g. all truncated)."""


class UnreliableEstimateError(RiskeigError):
    """Estimate exists but fails its own reliability gate (heavy truncation)."""


class InvariantError(RiskeigError):
    """An internal invariant that should be unbreakable was violated."""
