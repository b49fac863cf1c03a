"""Exception and warning types shared across the package."""


class RefjointError(Exception):
    """Base class for all package errors."""


class ConstantColumn(RefjointError):
    def __init__(self, index, label=None):
        self.index = index
        self.label = label
        name = label if label is not None else f"column {index}"
        super().__init__(f"{name} is constant (zero standard deviation)")


class SingularMatrix(RefjointError):
    def __init__(self, message, smallest_eigenvalue=None, duplicate_pair=None):
        self.smallest_eigenvalue = smallest_eigenvalue
        self.duplicate_pair = duplicate_pair
        super().__init__(message)


class DimensionMismatch(RefjointError):
    pass


class NonPositiveVariance(RefjointError):
    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"variance for coordinate {index} is not positive ({value})")


class DegenerateDirection(RefjointError):
    pass


class EmptyRegion(RefjointError):
    pass


class NumericalUnderflow(RefjointError):
    pass


class NotConverged(RefjointError):
    def __init__(self, message, last_iterate=None):
        self.last_iterate = last_iterate
        super().__init__(message)


class ZeroSignal(RefjointError):
    pass


class SelectionNeverOccurred(RefjointError):
    pass


class ParseError(RefjointError):
    def __init__(self, path, line_number, message):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class InconsistentN(RefjointError):
    pass


class IdMismatch(RefjointError):
    def __init__(self, missing=(), extra=()):
        self.missing = tuple(missing)
        self.extra = tuple(extra)
        parts = []
        if self.missing:
            parts.append(f"missing ids: {', '.join(self.missing)}")
        if self.extra:
            parts.append(f"extra ids: {', '.join(self.extra)}")
        super().__init__("; ".join(parts) or "id mismatch")


class RidgeWarning(UserWarning):
    """Emitted when a near-singular matrix is regularized before solving."""


class TooFewObservations(UserWarning):
    """Emitted when the panel is too small for a stable fourth-moment estimate."""
