"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def ensure_positive(name: str, value: float) -> None:
    if not value > 0:
        raise InvalidInputError(f"{name} must be > 0, got {value!r}")


def ensure_unit_interval(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise InvalidInputError(f"{name} must lie in [0, 1], got {value!r}")


def ensure_odd_window(name: str, value: int) -> None:
    if value < 3 or value % 2 == 0:
        raise InvalidInputError(f"{name} must be an odd integer >= 3, got {value!r}")


def ensure_grayscale_array(name: str, arr: np.ndarray) -> None:
    """2-D float array with intensities in [0, 1] and no NaN/inf."""
    if not isinstance(arr, np.ndarray) or arr.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-D numpy array")
    if not np.issubdtype(arr.dtype, np.floating):
        raise InvalidInputError(f"{name} must have a floating dtype, got {arr.dtype}")
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} contains NaN or inf")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise InvalidInputError(f"{name} intensities must lie in [0, 1]")


def ensure_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} contains NaN or inf")
