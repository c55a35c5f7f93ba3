"""Error taxonomy shared across the laboratory.

Configuration problems (bad flags, impossible budgets) are distinguished from
runtime failures (a ladder dying mid-run) and from data problems (a curve that
cannot be inverted), because the CLI maps them to different exit codes.
"""
from __future__ import annotations


class SmallballError(Exception):
    """Base class for all laboratory errors."""


class ConfigurationError(SmallballError):
    """Invalid configuration: bad argument values, impossible budgets."""


class ShapeError(ConfigurationError):
    """Array shape does not match the model grid."""


class DomainError(ConfigurationError):
    """Parameter outside its mathematical domain (eps <= 0, p < 1, ...)."""


class DataError(SmallballError):
    """Input data unusable (non-monotone curve after projection, ties, ...)."""


class RangeError(DataError):
    """Query outside the range covered by a measured curve."""


class LadderError(SmallballError):
    """A splitting level lost every survivor."""

    def __init__(self, level_index: int, eps: float, message: str | None = None):
        self.level_index = level_index
        self.eps = eps
        super().__init__(
            message or f"splitting ladder too aggressive: no survivors at level {level_index} (eps={eps:g})"
        )


class DiagnosticError(SmallballError):
    """A structural assumption failed a runtime diagnostic (e.g. non-unimodal profile)."""


class PowerWarning(UserWarning):
    """Statistical power too low for the requested check."""
