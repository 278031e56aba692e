"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/argument problems -> 2,
transport problems -> 3, numeric failures -> 4.
"""


class ArgumentError(ValueError):
    """An argument or configuration value violates a precondition."""


class DimensionError(ArgumentError):
    """Shapes, lengths, or index sets are inconsistent."""


class DecodeError(ArgumentError):
    """A file could not be decoded (unsupported format, bad header)."""


class TransportError(RuntimeError):
    """An external denoiser endpoint failed (timeout, dead peer, error frame)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""
