"""Exception types shared across the package."""


class CugcnError(Exception):
    """Base class for all package errors."""


class ShapeError(CugcnError, ValueError):
    """Operand shapes do not agree."""


class SymmetryError(CugcnError, ValueError):
    """A matrix that must be symmetric is not."""


class ParameterError(CugcnError, ValueError):
    """A configuration or call parameter is outside its valid range."""


class DomainError(CugcnError, ValueError):
    """A numeric argument lies outside the function's domain."""


class FormatError(CugcnError, ValueError):
    """A data file does not follow its documented grammar."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class NumericError(CugcnError, FloatingPointError):
    """A computation produced NaN or Inf."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss.

    ``snapshot`` holds the diagnostic state at the time of failure.
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
