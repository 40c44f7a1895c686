"""Error types shared across the package.

Exit-code mapping used by the CLI: ContractViolationError -> 1,
ConfigurationError -> 2.
"""


class GKNetError(Exception):
    """Base class for all package errors."""


class ContractViolationError(GKNetError):
    """An operation was called with arguments violating its contract."""


class ConfigurationError(GKNetError):
    """A configuration value or file is invalid or inconsistent."""
