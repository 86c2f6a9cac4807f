"""Exception taxonomy shared across the package.

Validation-type errors map to CLI exit code 1, everything else to 2.
"""


class DavadError(Exception):
    """Base class for all package errors."""


class ShapeError(DavadError, ValueError):
    """Tensor shapes or dimensions are incompatible with an operation."""


class ParameterError(DavadError, ValueError):
    """An argument value is outside its documented domain."""


class StateError(DavadError, RuntimeError):
    """An object is in the wrong state for the requested operation."""


class FormatError(DavadError, ValueError):
    """A binary or text file does not conform to its format."""


class ValidationError(DavadError, ValueError):
    """Input data violates a documented invariant."""


class CorpusError(DavadError, ValueError):
    """A corpus cannot support the requested operation."""


class CapabilityError(DavadError, RuntimeError):
    """The model was built without the requested branch or feature."""


class UndefinedRateError(DavadError, ArithmeticError):
    """A rate has a zero denominator and must be reported as N/A."""


class UsageError(DavadError, ValueError):
    """Bad command line or configuration input."""


#: errors that indicate bad input rather than an internal failure
VALIDATION_ERRORS = (
    ShapeError,
    ParameterError,
    FormatError,
    ValidationError,
    CorpusError,
    CapabilityError,
    UsageError,
)
