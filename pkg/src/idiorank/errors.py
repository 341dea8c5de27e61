"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ValidationError -> 2,
TransportError -> 3, NumericalError -> 4.
"""


class IdiorankError(Exception):
    """Base class for all package errors."""


class ValidationError(IdiorankError):
    """Malformed or contract-violating input data."""


class TransportError(IdiorankError):
    """LLM transport failed after exhausting retries."""


class NumericalError(IdiorankError):
    """Degenerate numerics: zero-norm vectors, NaN/Inf, divergence."""


class LookupError_(IdiorankError):
    """Missing key in an embedding store."""


class ConfigError(IdiorankError):
    """Invalid configuration value."""
