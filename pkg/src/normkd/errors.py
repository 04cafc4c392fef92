"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to:
config problems exit 2, file/IO problems exit 3, contract violations
(bad shapes, bad labels, non-finite numbers) exit 4.
"""


class NormKDError(Exception):
    exit_code = 1


class ConfigError(NormKDError):
    """Malformed or inconsistent experiment configuration."""

    exit_code = 2


class FileFormatError(NormKDError):
    """Unreadable or corrupt data/cache/metrics file."""

    exit_code = 3


class ContractError(NormKDError):
    """A documented precondition was violated by the caller."""

    exit_code = 4


class DimensionError(ContractError):
    """Operands have incompatible shapes."""


class NumericError(ContractError):
    """A computation produced or received non-finite or invalid values."""
