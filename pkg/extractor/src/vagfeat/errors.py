"""Exception types shared across the package.

Everything derives from VagfeatError so callers can catch the whole family;
each subclass also derives from ValueError to stay friendly to plain Python.
"""


class VagfeatError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(VagfeatError, ValueError):
    """A flag or weights selection is missing, malformed, or unusable."""


class InputError(VagfeatError, ValueError):
    """User-supplied data is unusable (missing file, corrupt image)."""


class NumericError(VagfeatError, ValueError):
    """A computed value left the numeric domain (NaN/Inf, negative)."""
