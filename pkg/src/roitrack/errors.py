"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array arguments have incompatible or unexpected shapes."""


class ParameterError(ValueError):
    """A configuration value or argument is outside its valid range."""


class FormatError(ValueError):
    """An on-disk artifact is malformed (bad magic, truncation, bad field)."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
