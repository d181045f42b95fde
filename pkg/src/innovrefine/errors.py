"""Exception hierarchy shared by all modules."""


class InnovRefineError(ValueError):
    """Base class for every error raised by this package."""


class NonPositiveDepth(InnovRefineError):
    pass


class InsufficientPoints(InnovRefineError):
    pass


class UnsupportedFormat(InnovRefineError):
    pass


class DimensionMismatch(InnovRefineError):
    pass


class EmptyMask(InnovRefineError):
    pass


class EmptyModel(InnovRefineError):
    pass


class InvalidNoiseSpec(InnovRefineError):
    pass


class InvalidSpec(InnovRefineError):
    pass


class StepSizeOutOfRange(InnovRefineError):
    pass


class OracleShapeMismatch(InnovRefineError):
    pass


class NoConsensus(InnovRefineError):
    pass


class DegenerateField(InnovRefineError):
    pass


class DegenerateConfiguration(InnovRefineError):
    pass


class NoConvergence(InnovRefineError):
    pass


class SamplingExhausted(InnovRefineError):
    pass
