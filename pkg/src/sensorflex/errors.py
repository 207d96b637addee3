"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI: OSError -> 2, DataError -> 3,
ConfigError -> 4, NumericError -> 5.
"""


class SensorflexError(Exception):
    """Base class for all library errors."""


class ConfigError(SensorflexError):
    """Invalid or inconsistent configuration."""


class DimensionError(ConfigError):
    """Tensor shapes do not line up for the requested operation."""


class DataError(SensorflexError):
    """Malformed or unusable input data."""


class EmptyInputError(DataError):
    """Every channel group was masked away; nothing left to encode."""


class NumericError(SensorflexError):
    """Non-finite values or a failed numeric check."""
