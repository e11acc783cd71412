"""
Exception hierarchy for the UMM toolkit
Every error raised on purpose by the package derives from UMMError
"""


class UMMError(Exception):
    """Base class for all toolkit errors"""


class SymbolUnknown(UMMError, KeyError):
    """Symbol index or name is not part of the trial's symbol set"""


class DegeneratePartition(UMMError):
    """A hypothesis partition has an empty target or non-target side"""


class ArgumentOutOfRange(UMMError, ValueError):
    pass


class EmptyPool(UMMError):
    """Covariance estimation was asked for on an empty epoch pool"""


class InsufficientData(UMMError):
    pass


class ShapeMismatch(UMMError, ValueError):
    pass


class NotPositiveDefinite(UMMError):
    """Matrix could not be factorized as symmetric positive definite"""


class TooFewSymbols(UMMError):
    pass


class NoAccumulatedMeans(UMMError):
    """No class means were accumulated yet (no trial processed since start or reset)"""


class InconsistentDimensions(UMMError, ValueError):
    """Trial feature dimension differs from previously processed trials"""


class InvalidConfig(UMMError, ValueError):
    pass


class FormatVersionUnsupported(UMMError):
    pass


class CorruptPayload(UMMError):
    """Epoch payload size does not match the manifest"""


class MissingLabels(UMMError):
    """Metrics need true symbols but the decision log has none"""
