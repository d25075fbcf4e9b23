"""Exception types shared across the package.

The CLI maps each family onto its own exit code, so raise the narrowest one.
"""


class ParameterError(ValueError):
    """An argument is outside its documented domain."""


class DataError(ValueError):
    """Input data (trajectories, tables, CSV files) violates its schema."""


class ConfigError(ValueError):
    """An experiment or generator config cannot be interpreted."""


class UnknownConfigError(KeyError):
    """A configuration id is not present in a performance table."""
