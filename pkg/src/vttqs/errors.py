"""Exception hierarchy shared by all modules."""


class VTTError(Exception):
    """Base class for library errors."""


class InvalidInputError(VTTError, ValueError):
    pass


class InconsistentStateError(VTTError, ValueError):
    """The answers in a state match no valid ground-truth image."""


class ContractViolationError(VTTError, RuntimeError):
    pass


class ExhaustedError(VTTError, LookupError):
    """Every question has already been asked."""


class NumericFailureError(VTTError, ArithmeticError):
    pass


class SchemaViolationError(VTTError, ValueError):
    """A row of an annotation file breaks the schema or an image invariant."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
