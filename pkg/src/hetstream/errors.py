"""Exception taxonomy shared by all hetstream modules."""

from __future__ import annotations


class HetstreamError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(HetstreamError):
    """Operands have incompatible shapes."""


class SingularMatrix(HetstreamError):
    """A linear system is rank deficient at the configured pivot tolerance."""


class NotPositiveDefinite(HetstreamError):
    """A Cholesky pivot fell at or below the configured tolerance."""


class EmptyBatch(HetstreamError):
    """A batch with zero observations was supplied."""


class NonFiniteData(HetstreamError):
    """Input rows contain NaN or infinity; missing values are a hard error."""


class SchemaMismatch(HetstreamError):
    """Two statistics objects do not share a schema / phase tag."""


class InvalidSchema(HetstreamError):
    """A stream schema violates its invariants."""


class PhaseMismatch(HetstreamError):
    """An operation was applied in the wrong stream phase."""


class InsufficientData(HetstreamError):
    """The requested quantity is not identified by the data seen so far."""


class InvalidConfig(HetstreamError):
    """A simulation or CLI configuration violates its invariants."""


class InvalidDegrees(HetstreamError):
    """Degrees of freedom for the F distribution must be positive integers."""


class NonConvergence(HetstreamError):
    """An iterative routine hit its iteration cap without converging."""


class SingularBatch(HetstreamError):
    """A per-batch system needed by an estimator is singular.

    Carries the 1-based index of the offending batch in ``batch_index``.
    """

    def __init__(self, message: str, batch_index: int):
        super().__init__(message)
        self.batch_index = batch_index
