"""Domain error hierarchy. Every error carries a stable machine-readable code."""


class DomainError(Exception):
    """Base class for pipeline errors; `code` is stable across releases."""

    code = "DOMAIN_ERROR"

    def __init__(self, detail=""):
        super().__init__(detail or self.code)
        self.detail = detail or self.code


class DimensionMismatch(DomainError):
    code = "DIMENSION_MISMATCH"


class NonImageFile(DomainError):
    code = "NON_IMAGE_FILE"


class BadRatios(DomainError):
    code = "BAD_RATIOS"


class SchemaMismatch(DomainError):
    code = "SCHEMA_MISMATCH"


class IoFailure(DomainError):
    code = "IO_ERROR"


class DegenerateMask(DomainError):
    code = "DEGENERATE_MASK"


class NumericNonfinite(DomainError):
    code = "NUMERIC_NONFINITE"


class ArchMismatch(DomainError):
    code = "ARCH_MISMATCH"


class CorruptCheckpoint(DomainError):
    code = "CORRUPT_CHECKPOINT"


class EmptySplit(DomainError):
    code = "EMPTY_SPLIT"


class MissingMask(DomainError):
    code = "MISSING_MASK"


class EmptyInput(DomainError):
    code = "EMPTY_INPUT"


class PoolTooSmall(DomainError):
    code = "POOL_TOO_SMALL"


class SessionComplete(DomainError):
    code = "SESSION_COMPLETE"


class SessionIncomplete(DomainError):
    code = "SESSION_INCOMPLETE"


class DuplicateResponse(DomainError):
    code = "DUPLICATE_RESPONSE"


class UnknownTrial(DomainError):
    code = "UNKNOWN_TRIAL"


class UnknownSession(DomainError):
    code = "UNKNOWN_SESSION"
