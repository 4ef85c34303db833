"""Exception types shared across the package.

The CLI maps these onto exit codes: ``ConfigError`` -> 2, ``DataError`` -> 3,
``InvariantError`` -> 4.
"""


class ConfigError(ValueError):
    """Invalid hyperparameters, layer sizes or experiment configuration."""


class DataError(ValueError):
    """Problem with input samples or stream files."""


class InputError(DataError):
    """Bad values handed to an operation (empty batch, NaN features, ...)."""


class ShapeError(InputError):
    """Array dimensions do not line up."""


class StreamParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SequencingError(RuntimeError):
    """Months were processed out of order."""


class InvariantError(RuntimeError):
    """An internal invariant was violated (e.g. non-finite parameters)."""
