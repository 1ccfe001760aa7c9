"""
Exception hierarchy shared by the models, services and CLI.

Each exception maps to one CLI exit code (see ``api.commands``).
"""

from typing import Optional


class ReconError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ReconError):
    """Invalid or inconsistent experiment configuration."""


class DataSchemaError(ReconError):
    """Input data file missing or not in the expected schema."""


class ShapeMismatchError(ReconError, ValueError):
    """Array shapes disagree with the declared configuration."""


class ParameterRangeError(ReconError, ValueError):
    """Model parameter outside its admissible range."""


class WindowCoverageError(ReconError):
    """A day is not covered by any window, or a span is shorter than the window."""

    def __init__(self, message: str, day: Optional[int] = None):
        super().__init__(message)
        self.day = day


class NumericOverflowError(ReconError):
    """Non-finite value produced during training or evaluation."""

    def __init__(self, message: str, time_step: Optional[int] = None, epoch: Optional[int] = None):
        super().__init__(message)
        self.time_step = time_step
        self.epoch = epoch


class DivergenceError(ReconError):
    """ODE integration produced a non-finite state."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step
