"""Weather-to-econometrics pipeline for agricultural climate impact studies.

Station interpolation, sparse aggregation of gridded weather to
administrative units, temperature exposure bins and degree days, basis
reductions of bin regressions, fixed-effects panel estimation, spatial
inference, placebo tests and specification curves.
"""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    AgropanelError, AlignmentError, ConfigurationError, ConvergenceError, GridFormatError, RankError,
    ShapeError, ValidationError, WindowError,
)

__all__ = [
    "__version__",
    "AgropanelError",
    "AlignmentError",
    "ConfigurationError",
    "ConvergenceError",
    "GridFormatError",
    "RankError",
    "ShapeError",
    "ValidationError",
    "WindowError",
]
