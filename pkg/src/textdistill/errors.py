"""Exception types raised across the package."""


class TextDistillError(Exception):
    """Base class for all package errors."""


class DimensionError(TextDistillError, ValueError):
    pass


class DependencyError(TextDistillError, ValueError):
    """A requested gradient input is not connected to the output."""


class VocabularyError(TextDistillError, ValueError):
    pass


class LabelError(TextDistillError, ValueError):
    pass


class ArgumentError(TextDistillError, ValueError):
    pass


class SchemaError(TextDistillError, ValueError):
    pass


class ParseError(TextDistillError, ValueError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class NumericalError(TextDistillError, ArithmeticError):
    """Non-finite values were produced."""
