"""Exception types shared across the library."""


class ShapeError(ValueError):
    """Operand shapes are incompatible. Carries both shapes."""

    def __init__(self, message: str, *shapes):
        super().__init__(f"{message}: {' vs '.join(str(s) for s in shapes)}" if shapes else message)
        self.shapes = shapes


class ConvergenceError(RuntimeError):
    """An iterative solver did not reach its tolerance. Carries the residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class DegenerateFeatureError(ValueError):
    """A feature row is unusable for the requested metric (e.g. zero norm under cosine)."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class UndefinedMetricError(ValueError):
    """The metric has no defined value for these counts (e.g. no predicted positives)."""


class DatasetError(ValueError):
    """A dataset on disk is malformed. The message names the offending file or row."""


class ConfigError(ValueError):
    """A configuration document or value is invalid. The message names the key."""


class StaleCacheError(RuntimeError):
    """backward() was called without a matching forward() on the same inputs."""
