"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific one that applies.
"""


class ArgumentError(ValueError):
    """A value-level precondition failed (bad parameter, empty input...)."""


class DimensionError(ArgumentError):
    """Shapes or sizes of inputs are inconsistent."""


class FormatError(RuntimeError):
    """A file is unreadable, truncated, or fails its integrity check."""


class NumericalError(RuntimeError):
    """An iterative routine failed to converge.

    Carries the final relative residual so callers can report how close
    the solve got before giving up.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual
