"""Exception and warning types raised across the package."""


class TensorFeatError(Exception):
    """Base class for all package errors."""


class FormatError(TensorFeatError, ValueError):
    """Malformed ``.tns`` input (inconsistent columns, bad tokens, empty body)."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidIndexError(FormatError, IndexError):
    """A 1-based index that is zero or negative."""


class BoundsError(FormatError):
    """An index larger than its declared dimension."""


class DuplicateError(FormatError):
    """A coordinate tuple that occurs more than once."""


class ArityError(TensorFeatError, ValueError):
    """A mode order whose length does not match the tensor order."""


class OracleCapError(TensorFeatError, MemoryError):
    """The dense reference tally would exceed its cell cap."""


class EmptyDomainError(TensorFeatError, ValueError):
    pass


class NonPositiveCountError(TensorFeatError, ValueError):
    pass


class UnsupportedOrderError(TensorFeatError, ValueError):
    pass


class ParseError(TensorFeatError, ValueError):
    """A serialized feature set that cannot be decoded."""


class UnsupportedCombination(TensorFeatError, ValueError):
    """A method/scope pairing the extractor does not offer."""


class GroupingMemoryError(TensorFeatError, MemoryError):
    """Grouping-based extraction would allocate more than its cap."""


class DomainError(TensorFeatError, ValueError):
    pass


class CapacityError(TensorFeatError, ValueError):
    """More distinct indices requested than the range holds."""


class EmptySpecError(TensorFeatError, ValueError):
    pass


class InfeasibleSpecError(TensorFeatError, ValueError):
    pass


class IncompleteFeatureError(TensorFeatError, KeyError):
    pass


class InfeasibleAverageWarning(UserWarning):
    """Requested average exceeds the index range; clamping biases the mean low."""
