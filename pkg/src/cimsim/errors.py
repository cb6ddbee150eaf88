"""Exception hierarchy shared across the simulator."""


class CimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(CimError, ValueError):
    pass


class CalibrationError(CimError, ValueError):
    pass


class QuantizeError(CimError, ValueError):
    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = indices


class MappingError(CimError, ValueError):
    pass


class InputError(CimError, ValueError):
    pass


class AccumError(CimError, OverflowError):
    pass


class TraceError(CimError, ValueError):
    pass


class RmseUndefined(CimError, ValueError):
    pass


class CalibrationWarning(UserWarning):
    pass
