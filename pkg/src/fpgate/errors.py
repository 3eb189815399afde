"""Exception types shared across the package."""


class FpgateError(Exception):
    """Base class for all errors raised by fpgate."""


class PgmError(FpgateError, ValueError):
    pass


class BadMagic(PgmError):
    pass


class UnsupportedDepth(PgmError):
    pass


class Truncated(PgmError):
    pass


class BadDimensions(PgmError):
    pass


class ShapeMismatch(FpgateError, ValueError):
    pass


class EmptyForeground(FpgateError):
    pass


class StoreError(FpgateError):
    pass


class CorruptLayout(StoreError):
    pass


class IoFailure(StoreError):
    pass


class DuplicateId(StoreError):
    pass


class UnknownId(StoreError, KeyError):
    pass


class OutOfOrderEvent(FpgateError, ValueError):
    pass


class InsufficientData(FpgateError, ValueError):
    pass


class EmptyGallery(FpgateError):
    pass


class CalibrationSaturated(UserWarning):
    """No sweep threshold reaches the requested FAR; the maximum was used."""
