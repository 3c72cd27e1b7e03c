"""Exception types shared across the package.

The CLI maps :class:`ValidationError` subclasses to exit code 1 and
everything else raised at runtime to exit code 2.
"""


class ValidationError(ValueError):
    """Bad user input: shapes, ranges, missing artifacts, malformed configs."""


class InvalidInputError(ValidationError):
    """An operation received values outside its contract (non-finite, empty, mismatched)."""


class UnsupportedInstanceError(ValidationError):
    """Instance is outside the supported scale of an exact oracle."""


class CorruptFileError(RuntimeError):
    """On-disk artifact failed magic, shape, or length verification."""


class SamplingStarvationError(RuntimeError):
    """Confidence-filtered sampling could not reach the requested yield."""

    def __init__(self, message: str, worst_class: int | None = None):
        super().__init__(message)
        self.worst_class = worst_class


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; last good state is reported."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration
