"""Input validation helpers.

Small checks shared by the estimators and policies; they normalize array
inputs and raise early with readable messages instead of letting shape
errors surface deep inside numpy.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


def as_float_matrix(X, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise DataError(f"{name} must be a 2-d array, got shape {X.shape}")
    if X.size and not np.all(np.isfinite(X)):
        raise DataError(f"{name} contains non-finite entries")
    return X


def as_float_vector(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size and not np.all(np.isfinite(x)):
        raise DataError(f"{name} contains non-finite entries")
    return x


def as_class_labels(y, name: str = "y") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise DataError(f"{name} must be 1-d, got shape {y.shape}")
    as_int = y.astype(np.int64)
    if not np.array_equal(as_int, y):
        raise DataError(f"{name} must contain integer class labels")
    if as_int.size and as_int.min() < 0:
        raise DataError(f"{name} contains negative class labels")
    return as_int


def check_observed(observed, d: int) -> tuple[int, ...]:
    """Validate a subset of feature indices and return it sorted."""
    observed = tuple(int(j) for j in observed)
    if len(set(observed)) != len(observed):
        raise ValueError(f"observed indices contain duplicates: {observed}")
    for j in observed:
        if not 0 <= j < d:
            raise ValueError(f"feature index {j} out of range [0, {d})")
    return tuple(sorted(observed))


def check_observed_values(values, observed, d: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """Validate a (values, indices) pair; values are reordered to match the sorted indices."""
    raw = tuple(int(j) for j in observed)
    values = as_float_vector(values, "values")
    if values.size != len(raw):
        raise ValueError(
            f"got {values.size} values for {len(raw)} observed indices"
        )
    order = np.argsort(np.asarray(raw, dtype=np.int64), kind="stable")
    observed = check_observed([raw[i] for i in order], d)
    return values[order], observed
