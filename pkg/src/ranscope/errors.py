"""Exception types shared across the package."""


class RanscopeError(Exception):
    pass


class ConfigError(RanscopeError, ValueError):
    """Invalid scenario, frame, or filter configuration."""


class InvalidSlot(RanscopeError, ValueError):
    """Slot index cannot carry data in the requested direction."""


class ReplayMismatch(RanscopeError):
    pass


class NoOverlap(RanscopeError):
    def __init__(self, message: str, best_ratio: float = 0.0):
        super().__init__(message)
        self.best_ratio = best_ratio


class InsufficientData(RanscopeError, ValueError):
    pass


class IncompleteTrials(RanscopeError, ValueError):
    pass
