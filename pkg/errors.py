"""
Exception hierarchy shared by the simulator, the exact oracle and the checks.

Library code raises these; only the command line maps them to exit codes.
"""


class TFIMError(Exception):
    """Base class for every error raised by this package"""


class DomainError(TFIMError, ValueError):
    """A precondition of a library operation was violated"""


class ContractViolation(TFIMError):
    """Two objects that must agree (halves, reports, checkpoints) do not"""


class ConfigError(TFIMError):
    """An experiment configuration could not be read or validated"""
