"""Exception hierarchy shared across the package."""


class ScatError(Exception):
    """Base class for every error raised by scatseg."""


class DimensionError(ScatError, ValueError):
    pass


class ShapeError(ScatError, ValueError):
    pass


class NumericError(ScatError, FloatingPointError):
    pass


class LabelError(ScatError, ValueError):
    pass


class OptimError(ScatError, RuntimeError):
    pass


class EmptyCloudError(ScatError, ValueError):
    pass


class AssignmentError(ScatError, ValueError):
    pass


class NeighborError(ScatError, ValueError):
    pass


class EmptySupportError(ScatError, ValueError):
    """All support masks are empty, so the episode carries no class evidence."""


class PoolError(ScatError, ValueError):
    pass


class VariantError(ScatError, ValueError):
    pass


class SpecError(ScatError, ValueError):
    pass


class FormatError(ScatError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ScatError, ValueError):
    pass
