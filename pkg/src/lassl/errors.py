"""Exception hierarchy shared by every module."""


class LasslError(Exception):
    """Base class for all package errors."""


class DimensionError(LasslError, ValueError):
    pass


class DegenerateRowError(LasslError, ValueError):
    pass


class StateError(LasslError, RuntimeError):
    pass


class ContractError(LasslError, ValueError):
    pass


class ConfigError(LasslError, ValueError):
    pass


class FormatError(LasslError, ValueError):
    """Malformed, truncated or otherwise unreadable file."""


class VersionMismatchError(FormatError):
    pass


class ConsistencyError(LasslError, ValueError):
    """A file is well formed but does not fit the data it is used with."""


class InsufficientGroupError(LasslError, ValueError):
    pass


class DivergenceError(LasslError, FloatingPointError):
    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch = epoch
        self.batch = batch
        msg = f"non-finite loss at epoch {epoch}, batch {batch}"
        super().__init__(f"{msg}: {detail}" if detail else msg)
