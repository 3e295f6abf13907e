from typing import Any


class LabError(Exception):
    """Base class for every error raised by the laboratory."""


class DimensionError(LabError, ValueError):
    """Grid or array shapes are unusable (too small or mismatched)."""


class DomainError(LabError, ValueError):
    """Input violates a mathematical precondition (sign of f, regions...)."""


class ResolutionError(LabError, ValueError):
    """A length scale is too small to be resolved by the grid."""


class BracketError(LabError, ValueError):
    """Shooting could not bracket the integration constant."""


class FitError(LabError, ValueError):
    """Not enough data (or degenerate data) for a rate fit."""


class ConfigError(LabError, ValueError):
    """Invalid experiment configuration (unknown keys, bad values)."""


class NotApplicableError(LabError, ValueError):
    """The requested check does not apply to the supplied data."""


class DivergenceError(LabError, RuntimeError):
    """Pseudo-time iteration blew up."""

    def __init__(self, message: str, diagnostics: dict[str, Any]):
        super().__init__(message)
        self.diagnostics = diagnostics
