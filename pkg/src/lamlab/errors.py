"""Exception hierarchy shared by every lamlab module."""


class LamLabError(Exception):
    """Base class for all errors raised by lamlab."""


class ShapeError(LamLabError, ValueError):
    """Operands have incompatible shapes."""


class NotSymmetricError(LamLabError, ValueError):
    pass


class ConvergenceError(LamLabError, RuntimeError):
    def __init__(self, message: str, max_iter: int):
        super().__init__(f"{message} (iteration cap {max_iter})")
        self.max_iter = max_iter


class NonFiniteError(LamLabError, FloatingPointError):
    """A NaN or Inf showed up where finite values are required."""

    def __init__(self, message: str, block: str | None = None, step: int | None = None):
        super().__init__(message)
        self.block = block
        self.step = step


class RankError(LamLabError, ValueError):
    pass


class OracleAssumptionError(LamLabError, ValueError):
    """The environment violates an assumption a closed form relies on."""


class ConfigError(LamLabError, ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class CheckpointError(LamLabError, IOError):
    pass


class CorruptFileError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass
