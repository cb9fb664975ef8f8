"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class GazekitError(Exception):
    """Base class for all toolkit errors."""


class InvalidDirection(GazekitError):
    """Pitch/yaw pair outside the valid range."""


class NonUnitInput(GazekitError):
    """Vector expected to have unit norm does not."""


class InvalidRotation(GazekitError):
    """Matrix is not a proper rotation."""


class DegenerateGeometry(GazekitError):
    """Geometric construction has no well-defined answer for this input."""


class BehindCamera(GazekitError):
    """Point or mesh lies at or behind the camera plane (z <= 0)."""


class SingularNormalEquations(GazekitError):
    """Least-squares Jacobian is rank-deficient."""


class NoConvergence(GazekitError):
    """Iterative solver stalled; carries the last iterate and residual."""

    def __init__(self, message: str, last_iterate=None, residual: float | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class EmptyPool(GazekitError):
    """Background image pool is empty."""


class EmptyAfterFilter(GazekitError):
    """No subject survives the sample-count filter."""


class LabelMismatch(GazekitError):
    """Mesh labels disagree with manifest labels beyond tolerance."""


class RenderFailure(GazekitError):
    """A single sample failed to render."""


class DimensionMismatch(GazekitError):
    """Operands have incompatible shapes."""


class TooSmall(GazekitError):
    """Image too small for the requested window/scale count."""


class ZeroVector(GazekitError):
    """Vector with zero norm where a direction is required."""


class NonFinite(GazekitError):
    """NaN or infinity in an input that must be finite."""


class TooFewRows(GazekitError):
    """Feature set has too few rows for the requested statistic."""


class MissingTarget(GazekitError):
    """Redirection pattern requires a target that was not supplied."""


class EmptyRun(GazekitError):
    """No records to aggregate."""


class ExternalToolError(GazekitError):
    """An external estimator/extractor process failed or misbehaved."""


class FormatError(GazekitError):
    """Malformed artifact file; carries a byte or line position."""

    def __init__(self, message: str, *, line: int | None = None, offset: int | None = None):
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (byte {offset})"
        super().__init__(message + where)
        self.line = line
        self.offset = offset


class ConfigError(GazekitError):
    """Bad or unknown run-configuration entry."""
