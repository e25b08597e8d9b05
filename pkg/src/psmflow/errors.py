"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code used for its failure category.
"""


class PsmflowError(Exception):
    exit_code = 1


class ConfigError(PsmflowError):
    """Invalid or inconsistent configuration."""

    exit_code = 2

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [message])


class NumericalError(PsmflowError):
    """Instability, NaN, or an unphysical state detected during a run."""

    exit_code = 3


class SynchronizationError(PsmflowError):
    """Inconsistent distributed state (unknown ids, lost particles, ...)."""

    exit_code = 4


class OutputError(PsmflowError):
    exit_code = 5
