"""Exception types shared across the package.

Geometry and scoring errors signal conditions under which a metric is
undefined for a pair; the evaluation layer catches them and records the
pair as skipped instead of aborting a run. Data and configuration errors
abort with distinct CLI exit codes (2 and 3 respectively).
"""


class EgoEvalError(Exception):
    """Base class for all package errors."""


class NonPositiveDepth(EgoEvalError):
    """Point is behind or on the camera projection plane."""


class BehindCamera(EgoEvalError):
    """Every corner of a box lies behind the camera projection plane."""


class OriginInsidePolygon(EgoEvalError):
    """Ego origin lies inside a BEV footprint; visibility extremes undefined."""


class DegenerateDistance(EgoEvalError):
    """A representative point or footprint center is too close to the origin."""


class EmptyGroundTruth(EgoEvalError):
    """Ground-truth region has zero area."""


class MissingCamera(EgoEvalError):
    """Ego-view filtering requested on a frame without a camera model."""


class SchemaError(EgoEvalError):
    """Dataset file violates the schema; message names the offending field."""

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class UnmappedLabel(SchemaError):
    """A box label is missing from the dataset class map."""


class ConfigError(EgoEvalError):
    """Invalid run configuration."""


class BatchValidationError(EgoEvalError):
    """A batch request row is invalid; carries the offending row index."""

    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class InternalInvariantViolation(EgoEvalError):
    """An internal consistency check failed (CLI exit code 4)."""
