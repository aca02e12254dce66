"""Exception types shared across the package."""


class BNSearchError(Exception):
    """Base class for every error raised by this package."""


class BadReference(BNSearchError):
    """A name or index does not resolve to a variable or value."""


class CyclicNetwork(BNSearchError):
    """The parent relation contains a directed cycle."""


class IncompleteCPT(BNSearchError):
    """A table is missing rows or has rows of the wrong arity."""


class UnnormalizedRow(BNSearchError):
    """A table row does not sum to 1 within tolerance, or has entries outside [0, 1]."""


class DepthExceeded(BNSearchError):
    """Attempt to extend a partial description that already assigns every variable."""


class TooLarge(BNSearchError):
    """Exact enumeration would visit more worlds than the configured cap."""


class ZeroEvidence(BNSearchError):
    """The observation has probability 0; posteriors are undefined."""


class InvalidMass(BNSearchError):
    """A probability mass argument is negative or otherwise impossible."""


class NotAFailure(BNSearchError):
    """Counter extraction was invoked on a description that does not falsify the expectation."""


class ParseError(BNSearchError):
    """Malformed network file, evidence file, or query expression."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
