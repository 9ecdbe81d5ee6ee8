"""Exception hierarchy."""


class TLRError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(TLRError):
    pass


class EmptyDatasetError(TLRError):
    pass


class CannotSplitError(TLRError):
    pass


class SolverError(TLRError):
    """Iterative SVD gave up before converging."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class DimensionError(TLRError):
    """Interval indices fall outside the model; use folded likelihood instead."""


class FeatureError(TLRError):
    pass


class ModelFormatError(TLRError):
    pass
