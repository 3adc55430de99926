"""Exception hierarchy shared across the package."""


class SettlementError(Exception):
    """Base class for all errors raised by this package."""


class InputError(SettlementError, ValueError):
    """Malformed or invalid input data or configuration."""


class RasterFormatError(InputError):
    pass


class MaskFormatError(InputError):
    pass


class ModelFormatError(InputError):
    pass


class DimensionMismatchError(SettlementError, ValueError):
    """Two inputs that must agree in shape or band layout do not."""


class BandMismatchError(DimensionMismatchError):
    pass


class NumericalError(SettlementError, ArithmeticError):
    """A numerical routine produced non-finite or otherwise unusable output."""
