"""Exception hierarchy.

Everything raised on bad user input derives from :class:`ValidationError`,
which the command line maps to exit code 2.
"""


class AgropanelError(Exception):
    """Base class for all package errors."""


class ValidationError(AgropanelError, ValueError):
    """Input violates a documented precondition."""


class GridFormatError(ValidationError):
    """Malformed ESRI ASCII grid header or body."""


class ShapeError(ValidationError):
    """Array or grid dimensions do not conform."""


class AlignmentError(ValidationError):
    """Two rasters cannot be overlaid cell-for-cell."""


class RankError(ValidationError):
    """Design matrix is rank deficient."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class WindowError(ValidationError):
    """Not enough history to compute a rolling climate normal."""


class ConfigurationError(ValidationError):
    """Estimator options are inconsistent with the data supplied."""


class ConvergenceError(AgropanelError, RuntimeError):
    """Iterative procedure stopped without meeting its tolerance."""
