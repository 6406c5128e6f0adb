"""Exception types shared across the package.

The CLI maps these onto exit codes, so everything user-facing should
raise one of them rather than a bare ValueError.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad hyperparameter, malformed config file."""


class DataError(ValueError):
    """Invalid data: unparseable CSV, degenerate labels, infeasible split."""


class ShapeError(ValueError):
    """Tensor shape contract violation (mismatched dimensions)."""


class NumericError(ArithmeticError):
    """A non-finite value (NaN/Inf) appeared where finite math was promised."""
