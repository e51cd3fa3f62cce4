"""Exception types used across the package."""


class PackchargeError(Exception):
    """Base class for all package errors."""


class DomainError(PackchargeError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ParameterError(PackchargeError, ValueError):
    """A parameter set violates its invariants."""


class ConfigError(PackchargeError, ValueError):
    """Scenario/config file is malformed or inconsistent."""


class StateValidityError(PackchargeError, RuntimeError):
    """A simulated state left its physically valid region.

    Attributes:
        cell_index: offending cell (None if not cell-specific)
        reason: short machine-readable tag
    """

    def __init__(self, message, cell_index=None, reason=""):
        super().__init__(message)
        self.cell_index = cell_index
        self.reason = reason


class ProtocolError(PackchargeError, RuntimeError):
    """A charging protocol could not make progress (e.g. bisection bracket lost)."""


class SolverError(PackchargeError, RuntimeError):
    """The NMPC solver failed to start (bad initial point or precondition)."""
