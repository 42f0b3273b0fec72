"""Exception hierarchy shared by every module.

The CLI maps each family onto an exit code, so new errors should subclass
one of the three families below rather than ``Exception`` directly.
"""


class JobShopError(Exception):
    exit_code = 1
    kind = "error"


class ConfigError(JobShopError, ValueError):
    """Invalid parameters, flags or configuration values."""

    exit_code = 2
    kind = "config"


class DataError(JobShopError, ValueError):
    """Malformed or inconsistent input data (instances, records, checkpoints)."""

    exit_code = 3
    kind = "data"


class NumericError(JobShopError, ArithmeticError):
    """Non-finite values during training."""

    exit_code = 4
    kind = "numeric"


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidActionError(JobShopError, ValueError):
    """An action that the current mask forbids, or a query on a finished job."""

    exit_code = 3
    kind = "invalid_action"


class StateError(JobShopError, RuntimeError):
    exit_code = 3
    kind = "state"


class DimensionError(JobShopError, ValueError):
    exit_code = 3
    kind = "dimension"


class DegenerateMaskError(JobShopError, ValueError):
    exit_code = 3
    kind = "degenerate_mask"


class SizeGuardError(JobShopError, ValueError):
    exit_code = 2
    kind = "size_guard"
