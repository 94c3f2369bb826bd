"""Exception hierarchy shared across the package."""


class HardLabelKDError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(HardLabelKDError, ValueError):
    pass


class BudgetExhaustedError(HardLabelKDError):
    """Raised when an oracle or a per-direction meter runs out of queries."""


class PreconditionError(HardLabelKDError, ValueError):
    pass


class EstimationError(HardLabelKDError):
    """The zeroth-order gradient estimate collapsed to the zero vector."""


class NumericalError(HardLabelKDError, ArithmeticError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class FormatError(HardLabelKDError, ValueError):
    """Malformed IDX file, manifest or binary blob."""


class ConfigError(HardLabelKDError, ValueError):
    pass
