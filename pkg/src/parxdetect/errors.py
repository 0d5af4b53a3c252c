"""Exception hierarchy shared by every layer."""


class ParxDetectError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ParxDetectError, ValueError):
    pass


class InsufficientDataError(ParxDetectError):
    """Raised when a fit or statistic has too few usable samples."""

    def __init__(self, message, n_rows=None):
        super().__init__(message)
        self.n_rows = n_rows


class MeterUntrainableError(InsufficientDataError):
    def __init__(self, meter_id, skipped=()):
        super().__init__(f"no trainable cell for meter {meter_id!r}", n_rows=0)
        self.meter_id = meter_id
        self.skipped = tuple(skipped)


class StoreError(ParxDetectError, OSError):
    pass


class EmptyStoreError(StoreError):
    pass


class StaleVersionError(StoreError):
    pass


class CorruptSnapshotError(StoreError):
    pass
