"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, numeric failures
(DivergenceError, NonFiniteError) -> 3, file problems (FormatError, OSError)
-> 4.
"""


class ProtoPredError(Exception):
    """Base class for package-specific errors."""


class ShapeMismatchError(ProtoPredError):
    """Two adjacent layers (or an input) do not compose shape-wise."""


class ConfigError(ProtoPredError):
    """Invalid configuration: bad value, unknown key, or schema violation."""


class FormatError(ProtoPredError):
    """A serialized artifact is malformed (bad magic, truncation, ...)."""


class DivergenceError(ProtoPredError):
    """Training produced a non-finite loss or weights."""


class NonFiniteError(ProtoPredError):
    """A public operation produced NaN or Inf."""
