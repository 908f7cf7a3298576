"""Exception types shared across the pipeline and services."""


class EyasError(Exception):
    """Base class for all domain errors. `code` feeds the service error body."""

    code = "error"


class BoundsError(EyasError):
    code = "bounds"


class DimensionMismatchError(EyasError):
    code = "dimension_mismatch"


class DecodeError(EyasError):
    code = "decode"


class ValidationError(EyasError):
    code = "validation"


class DegenerateTemplateError(EyasError):
    code = "degenerate_template"


class SegmentationEmptyError(EyasError):
    code = "segmentation_empty"


class DegenerateMaskError(EyasError):
    code = "degenerate_mask"


class InputFormatError(EyasError):
    code = "input_format"


class InsufficientVesselsError(EyasError):
    code = "insufficient_vessels"


class RoiTooSmallError(EyasError):
    code = "roi_too_small"


class OutOfViewError(EyasError):
    code = "out_of_view"


class MetricUndefinedError(EyasError):
    code = "metric_undefined"


class UnknownLabelError(EyasError):
    code = "unknown_label"


class RegistryConflictError(EyasError):
    code = "registry_conflict"


class BackendFailureError(EyasError):
    code = "backend_failure"


class StateError(EyasError):
    code = "state"


class EmptyReportError(EyasError):
    code = "empty_report"


class ClassificationFailedError(EyasError):
    code = "classification_failed"
