"""Exception hierarchy shared across the package."""


class HypergridError(Exception):
    """Base class for all package errors."""


class DomainError(HypergridError, ValueError):
    pass


class ArityError(HypergridError, ValueError):
    pass


class CapacityError(HypergridError, ValueError):
    pass


class UndefinedMetricError(HypergridError, ValueError):
    pass


class ConfigError(HypergridError):
    """Invalid study configuration, schema mismatch or bad expression."""


class DesignError(HypergridError):
    """Records do not form the factorial design an analysis requires."""


class DegenerateDesignError(DesignError):
    """The residual vanishes, so F statistics are undefined.

    ``fallback`` holds the effect table ranked by sum-of-squares share instead.
    """

    def __init__(self, message, fallback=None):
        super().__init__(message)
        self.fallback = fallback or []


class ProtocolError(HypergridError):
    pass


class TrainingFailure(HypergridError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
