"""Exception types shared across the package."""


class MechMetaError(Exception):
    """Base class for all package errors."""


class UnknownSymbol(MechMetaError, ValueError):
    pass


class DeadPrefix(MechMetaError, ValueError):
    """No member of the language starts with the given prefix."""


class RankOutOfRange(MechMetaError, IndexError):
    pass


class EmptySlice(MechMetaError, ValueError):
    pass


class BinUnfillable(MechMetaError, RuntimeError):
    pass


class ShapeMismatch(MechMetaError, ValueError):
    pass


class NonFiniteLoss(MechMetaError, FloatingPointError):
    """Training produced a NaN/inf loss.  ``where`` records provenance."""

    def __init__(self, message: str, where: dict | None = None):
        super().__init__(message)
        self.where = dict(where or {})


class BadDistribution(MechMetaError, ValueError):
    pass


class ScheduleError(MechMetaError, ValueError):
    pass
