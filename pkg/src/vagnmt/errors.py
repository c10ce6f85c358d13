"""Exception types shared across the package.

Everything derives from VagnmtError so callers can catch the whole family;
each subclass also derives from ValueError to stay friendly to plain Python.
"""


class VagnmtError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(VagnmtError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(VagnmtError, ValueError):
    """A value left the numeric domain (NaN/Inf, zero norm, diverged loss)."""


class ContractError(VagnmtError, ValueError):
    """An API was called in a way its contract forbids."""


class ConfigError(VagnmtError, ValueError):
    """A configuration value is missing, malformed, or out of range."""


class InputError(VagnmtError, ValueError):
    """User-supplied data is unusable (empty, misaligned, out of range)."""


class FormatError(VagnmtError, ValueError):
    """A serialized file does not match its declared binary/text format."""
