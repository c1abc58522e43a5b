"""Exception hierarchy shared by all gridsight modules."""


class GridSightError(Exception):
    """Base class for every error raised by the package."""


class FormatError(GridSightError):
    pass


class InvalidParameter(GridSightError, ValueError):
    pass


class OutOfBounds(GridSightError, IndexError):
    pass


class DimensionMismatch(GridSightError, ValueError):
    pass


class InsufficientData(GridSightError):
    pass


class InvalidInput(GridSightError, ValueError):
    pass


class NonConvergence(GridSightError):
    pass


class EmptyModel(GridSightError):
    pass


class IncompatibleModel(GridSightError):
    pass


class UnknownClass(GridSightError, KeyError):
    pass


class EmptyCluster(GridSightError, ValueError):
    pass


class ConfigError(GridSightError):
    pass
