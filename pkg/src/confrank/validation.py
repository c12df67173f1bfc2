"""Exceptions and input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class ShapeError(InvalidInputError):
    """Raised when an array does not have the expected shape."""

    def __init__(self, name: str, expected, actual):
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"{name}: expected shape {self.expected}, got {self.actual}")


class InvalidStateError(RuntimeError):
    """Raised when an object is used in a state that does not allow the call."""


class UndefinedMetricError(ValueError):
    """Raised when a metric is requested on inputs where it is not defined."""


class ParseError(InvalidInputError):
    """Malformed text file. Carries the file name and 1-based line number."""

    def __init__(self, path, line: int, message: str, column: int | None = None):
        self.path = str(path)
        self.line = line
        self.column = column
        loc = f"{self.path}:{line}" if column is None else f"{self.path}:{line}:{column}"
        super().__init__(f"{loc}: {message}")


def check_unit_interval(value, name: str) -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0):
        raise InvalidInputError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def check_open_unit_interval(value, name: str) -> float:
    value = float(value)
    if not (0.0 < value < 1.0):
        raise InvalidInputError(f"{name} must lie strictly inside (0, 1), got {value!r}")
    return value


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or int(value) != value or int(value) < 1:
        raise InvalidInputError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_array(values, name: str, shape=None, ndim: int | None = None) -> np.ndarray:
    """Return ``values`` as a finite float64 array, checking its shape.

    ``shape`` may contain ``None`` entries for free dimensions.
    """
    arr = np.asarray(values, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(name, (None,) * ndim, arr.shape)
    if shape is not None:
        if arr.ndim != len(shape) or any(
            s is not None and s != a for s, a in zip(shape, arr.shape)
        ):
            raise ShapeError(name, shape, arr.shape)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def check_scores(values, name: str) -> np.ndarray:
    arr = check_array(values, name, ndim=1)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise InvalidInputError(f"{name} must lie in [0, 1]")
    return arr
