"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an operation receives arguments outside its contract."""


class CarmenParseError(ValueError):
    """Raised on malformed log records; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class InitFailureError(RuntimeError):
    """Raised when the fit objective is non-finite at the initial point."""
