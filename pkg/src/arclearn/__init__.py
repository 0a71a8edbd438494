"""Grid-reasoning meta-learner with spectral-complexity analytics."""

from .errors import (ArclearnError, ConfigError, DataError, GradientError,
                     NumericError, ShapeError)
from .tensor import Parameter, Tensor

__version__ = "0.1.0"

__all__ = [
    "ArclearnError", "ConfigError", "DataError", "GradientError",
    "NumericError", "ShapeError", "Parameter", "Tensor", "__version__",
]
