"""Shared exception types.

The CLI maps these onto distinct exit codes, so keep the hierarchy flat
and specific: configuration/parse problems, shape problems, and numeric
blow-ups are different failures with different remedies.
"""


class A3RError(Exception):
    """Base class for library errors."""


class ConfigError(A3RError):
    """Bad or inconsistent configuration (unknown fields, invalid values)."""


class DimensionMismatch(A3RError):
    """Array shapes or widths do not line up."""


class NonFiniteError(A3RError):
    """A NaN or infinity appeared where the math requires finite values.

    During training this usually signals diverging parameters rather
    than a programming error.
    """


class FrameError(A3RError):
    """A point cloud is in the wrong coordinate frame for the operation."""
