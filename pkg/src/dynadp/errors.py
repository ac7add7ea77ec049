"""Exception hierarchy shared by every module."""


class DynaDPError(Exception):
    pass


class DimensionError(DynaDPError, ValueError):
    """Query and dataset live on different domains."""


class UnderflowError(DynaDPError, ValueError):
    """Multiset subtraction would go negative."""


class InvalidStreamError(DynaDPError, ValueError):
    """Stream is malformed or deletes an item that is not present."""


class DomainError(DynaDPError, ValueError):
    """Argument outside the operation's domain."""


class AccountingError(DynaDPError):
    """Budget composition cannot be evaluated (e.g. divergent series)."""


class DisjointnessViolation(AccountingError):
    """Adaptive parallel composition received overlapping declarations."""


class StateError(DynaDPError, RuntimeError):
    """Operation not allowed in the object's current state."""


class HorizonExceeded(DynaDPError, ValueError):
    """Finite-horizon mechanism fed or queried past its horizon."""


class ConfigError(DynaDPError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class GenerationError(DynaDPError, ValueError):
    """Workload profile cannot be realised."""
