import os

from .about import __version__

__version__  # Silence unused import warning.

DEFAULT_STDOUT_FORMAT = "[%(asctime)s] [%(name)s] [%(levelname)s] %(message)s"


def _threads_from_env(default=1):
    value = os.environ.get("BTMF_THREADS", "").strip()
    if not value:
        return default
    try:
        threads = int(value, 10)
    except ValueError:
        return default
    return max(threads, 1)


DEFAULT_THREADS = _threads_from_env()


def parse_lags(text):
    """Translate something like '1,2,144' -> (1, 2, 144)."""
    if isinstance(text, (list, tuple)):
        items = list(text)
    else:
        items = [item for item in str(text).replace(" ", "").split(",") if item]
    try:
        lags = tuple(int(item) for item in items)
    except (TypeError, ValueError):
        raise ConfigurationError(f"Lags ({text!r}) must be a comma separated list of integers")
    if not lags:
        raise ConfigurationError("At least one lag is required")
    if any(lag < 1 for lag in lags):
        raise ConfigurationError(f"Lags ({text!r}) must be positive")
    if any(b <= a for a, b in zip(lags, lags[1:])):
        raise ConfigurationError(f"Lags ({text!r}) must be strictly increasing")
    return lags


class BTMFError(ValueError):
    """Base of every error raised by btmfstream; ``code`` is the CLI exit status."""

    code = 1

    def __init__(self, message, code=None):
        if code is not None:
            self.code = code
        self.message = message
        super().__init__(message)

    def annotate(self, prefix):
        """Return an error of the same class with ``prefix`` prepended to the message."""
        error = self.__class__.__new__(self.__class__)
        BTMFError.__init__(error, f"{prefix}: {self.message}", self.code)
        for key, value in vars(self).items():
            if key not in ("message", "code", "args"):
                setattr(error, key, value)
        return error


class UsageError(BTMFError):
    code = 1


class ConfigurationError(UsageError):
    pass


class InvalidParameter(UsageError):
    pass


class DataError(BTMFError):
    code = 2


class ParseError(DataError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            location = f"line {line}" if column is None else f"line {line}, column {column}"
            message = f"{location}: {message}"
        super().__init__(message)


class ShapeError(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class InfeasibleSpec(DataError):
    pass


class UndefinedMetric(DataError):
    pass


class NumericalError(BTMFError):
    code = 3


class DecompositionError(NumericalError):
    def __init__(self, message, matrix=None):
        self.matrix = matrix
        super().__init__(message)
