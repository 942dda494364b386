"""Exception types shared across the package."""


class LstnError(Exception):
    """Base class for all package errors."""


class CorpusParseError(LstnError, ValueError):
    """Malformed corpus or lexicon record."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class EmptyCorpusError(LstnError, ValueError):
    """A corpus file parsed to zero dialogs."""


class ShapeError(LstnError, ValueError):
    """Array shapes do not conform for an operation."""


class NumericalError(LstnError, ArithmeticError):
    """A non-finite value appeared where probabilities were expected."""

    def __init__(self, message: str, turn: int | None = None):
        if turn is not None:
            message = f"turn {turn}: {message}"
        super().__init__(message)
        self.turn = turn


class NonFiniteGradientError(NumericalError):
    """A parameter gradient went non-finite; names the parameter."""

    def __init__(self, param: str):
        super().__init__(f"non-finite gradient in parameter '{param}'")
        self.param = param


class InferenceError(LstnError, RuntimeError):
    """Inference could not produce a response (e.g. empty cache entry)."""


class GenerationError(LstnError, RuntimeError):
    """The synthetic dialog machine is unusable (e.g. unreachable states)."""
