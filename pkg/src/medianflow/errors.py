"""Exception types shared across the package.

ConfigError maps to CLI exit code 2, NumericalError to exit code 3.
"""


class ConfigError(ValueError):
    """Invalid configuration, parameters, or input data."""


class NumericalError(RuntimeError):
    """A numerical validation failed (oracle blow-up, violated invariant)."""
