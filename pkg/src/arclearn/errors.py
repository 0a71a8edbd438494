"""Exception taxonomy shared by all modules."""


class ArclearnError(Exception):
    """Base class for all library errors."""


class ShapeError(ArclearnError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ArclearnError):
    """A computation produced NaN/Inf or is otherwise numerically invalid."""


class GradientError(ArclearnError):
    """Gradient state is missing or inconsistent for an optimizer step."""


class DataError(ArclearnError):
    """Malformed task documents, grids, or corpus files."""


class ConfigError(ArclearnError):
    """Invalid or unknown configuration values."""
