"""Exception hierarchy shared across the toolkit."""


class HbromError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(HbromError, ValueError):
    pass


class SymmetryError(HbromError, ValueError):
    pass


class ConvergenceError(HbromError, RuntimeError):
    pass


class ConfigError(HbromError, ValueError):
    pass


class InstabilityError(HbromError, RuntimeError):
    """A simulation or integration produced non-finite or inadmissible values."""

    def __init__(self, message, step=None, value=None):
        super().__init__(message)
        self.step = step
        self.value = value


class PositivityError(InstabilityError):
    pass


class InsufficientDataError(HbromError, ValueError):
    pass


class OrderError(HbromError, ValueError):
    pass


class RankDeficiencyError(HbromError, ValueError):
    pass


class DegenerateSpectrumError(HbromError, ValueError):
    pass


class StepSizeError(HbromError, RuntimeError):
    """Adaptive step size underflowed (problem too stiff or tolerance too tight)."""


class BudgetError(HbromError, RuntimeError):
    """Maximum number of integration steps exceeded."""


class RangeError(HbromError, ValueError):
    pass


class EvaluationError(HbromError, RuntimeError):
    pass


class TapeInvalidationError(HbromError, RuntimeError):
    """A tape was reused after the parameters it recorded were modified."""


class GradientExplosionError(HbromError, FloatingPointError):
    pass


class DivergenceError(HbromError, RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ContractError(HbromError, ValueError):
    pass


class FormatError(HbromError, ValueError):
    """Malformed file; ``offset`` is the byte offset where parsing failed."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at byte offset {offset})")
        self.offset = offset


class RankDeficiencyWarning(UserWarning):
    pass
