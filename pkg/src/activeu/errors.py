"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ActiveUError(Exception):
    exit_code = 1


class ArgumentError(ActiveUError, ValueError):
    """Bad arguments: wrong arity, unknown names, out-of-range parameters."""

    exit_code = 2


class DomainError(ArgumentError):
    """Non-finite or otherwise out-of-domain numeric input."""


class ParseError(ActiveUError):
    """Malformed input file. ``location`` is a human-readable position."""

    exit_code = 3

    def __init__(self, message, location=None):
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)
        self.location = location


class EstimationError(ActiveUError, RuntimeError):
    """An estimator could not produce a value (too few labels, singular
    system, optimizer failure). Optional diagnostics ride along."""

    exit_code = 4

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
