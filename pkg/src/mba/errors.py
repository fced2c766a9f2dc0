"""Exception and warning types raised across the package."""


class MbaError(Exception):
    """Base class for package errors."""


class InputError(MbaError, ValueError):
    """Malformed or inconsistent user input."""


class NumericError(MbaError, ArithmeticError):
    """A computation could not produce a usable numeric result."""


class TooFewSamples(InputError):
    pass


class DegenerateSamples(NumericError):
    pass


class DimensionMismatch(InputError):
    pass


class DomainError(InputError):
    pass


class VariantMismatch(InputError):
    pass


class UnsupportedQuery(InputError):
    pass


class UnsupportedBelief(InputError):
    pass


class UnsupportedSpec(InputError):
    pass


class GridMismatch(InputError):
    pass


class IndexOutOfRange(InputError, IndexError):
    pass


class LagTooLarge(InputError):
    pass


class AllZeroMass(NumericError):
    pass


class NonFiniteStart(NumericError):
    pass


class ChainDivergence(NumericError):
    pass


class BudgetExhausted(MbaError):
    """Proposal budget ran out; ``result`` holds whatever was accepted.

    ``study`` is the 1-based study index when raised from a multi-study run.
    """

    def __init__(self, message, result=None, study=None):
        super().__init__(message)
        self.result = result
        self.study = study


class WeightCollapse(RuntimeWarning):
    pass


class NonFiniteEstimate(RuntimeWarning):
    pass
