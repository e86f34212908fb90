"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numbers

import numpy as np

DEFAULT_TOL = 1e-9


class InvalidInputError(ValueError):
    """Raised when problem data is malformed; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class InfeasibleError(ValueError):
    """Raised when no allocation satisfies the energy constraints."""


class UnsupportedConfigurationError(ValueError):
    """Raised when a fast solver is asked to handle a case it does not cover."""


class SizeLimitError(ValueError):
    """Raised when an exhaustive or reference method would exceed its size cap."""


def check_matrix(value, name: str, shape=None, nonneg: bool = True) -> np.ndarray:
    """Convert ``value`` to a finite 2-D float array, rejecting ragged input."""
    if isinstance(value, np.ndarray):
        arr = value.astype(float, copy=True)
    else:
        try:
            rows = list(value)
        except TypeError:
            raise InvalidInputError(name, "expected a matrix") from None
        lengths = set()
        for row in rows:
            try:
                lengths.add(len(row))
            except TypeError:
                raise InvalidInputError(name, "expected a list of rows") from None
        if len(lengths) > 1:
            raise InvalidInputError(name, f"ragged rows with lengths {sorted(lengths)}")
        try:
            arr = np.array(rows, dtype=float)
        except (TypeError, ValueError):
            raise InvalidInputError(name, "non-numeric entries") from None
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 0)
    if arr.ndim != 2:
        raise InvalidInputError(name, f"expected 2 dimensions, got {arr.ndim}")
    if shape is not None and arr.shape != tuple(shape):
        raise InvalidInputError(name, f"expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(name, "entries must be finite")
    if nonneg and np.any(arr < 0):
        raise InvalidInputError(name, "entries must be nonnegative")
    arr.setflags(write=False)
    return arr


def check_vector(value, name: str, size=None, nonneg: bool = True) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise InvalidInputError(name, "expected a numeric vector") from None
    if arr.ndim != 1:
        raise InvalidInputError(name, f"expected 1 dimension, got {arr.ndim}")
    if size is not None and arr.size != size:
        raise InvalidInputError(name, f"expected length {size}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(name, "entries must be finite")
    if nonneg and np.any(arr < 0):
        raise InvalidInputError(name, "entries must be nonnegative")
    arr.setflags(write=False)
    return arr


def check_count(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InvalidInputError(name, "expected an integer")
    if value < minimum:
        raise InvalidInputError(name, f"must be >= {minimum}")
    return int(value)


def check_positive(value, name: str, allow_zero: bool = False) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise InvalidInputError(name, "expected a number") from None
    if not np.isfinite(x) or x < 0 or (x == 0 and not allow_zero):
        raise InvalidInputError(name, "must be positive" if not allow_zero else "must be >= 0")
    return x
