"""Input validation helpers.

Small check_* functions in the spirit of sklearn's validation module:
each raises :class:`~xiloss.errors.ParameterDomainError` naming the
offending parameter, so messages stay uniform across the package.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ParameterDomainError


def check_positive(value: float, name: str, allow_inf: bool = False) -> float:
    value = float(value)
    if math.isnan(value) or value <= 0:
        raise ParameterDomainError(f"{name} must be > 0, got {value!r}")
    if not allow_inf and math.isinf(value):
        raise ParameterDomainError(f"{name} must be finite, got {value!r}")
    return value


def check_nonnegative(value: float, name: str) -> float:
    value = float(value)
    if math.isnan(value) or value < 0:
        raise ParameterDomainError(f"{name} must be >= 0, got {value!r}")
    return value


def check_in(value: object, name: str, allowed: Sequence[object]) -> object:
    if value not in allowed:
        raise ParameterDomainError(
            f"{name} must be one of {sorted(map(str, allowed))}, got {value!r}"
        )
    return value


def check_count(value: int, name: str, minimum: int = 1) -> int:
    if int(value) != value:
        raise ParameterDomainError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < minimum:
        raise ParameterDomainError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_interval(
    lo: float, hi: float, name: str, positive: bool = True
) -> tuple[float, float]:
    lo, hi = float(lo), float(hi)
    if positive and lo <= 0:
        raise ParameterDomainError(f"{name} lower bound must be > 0, got {lo!r}")
    if not lo < hi:
        raise ParameterDomainError(f"{name} must satisfy lo < hi, got ({lo!r}, {hi!r})")
    return lo, hi


def check_1d(values, name: str, dtype=np.float64) -> np.ndarray:
    """Coerce to a 1D contiguous array, rejecting NaN and empty input."""
    arr = np.ascontiguousarray(values, dtype=dtype)
    if arr.ndim != 1 or arr.size == 0:
        raise ParameterDomainError(f"{name} must be a non-empty 1D array")
    if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
        raise ParameterDomainError(f"{name} contains non-finite values")
    return arr


def check_increasing(arr: np.ndarray, name: str) -> np.ndarray:
    if np.any(np.diff(arr) <= 0):
        raise ParameterDomainError(f"{name} must be strictly increasing")
    return arr
