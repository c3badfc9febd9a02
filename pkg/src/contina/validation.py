"""Small input-validation helpers shared across the package."""

import math


def check_finite(value, name):
    """Coerce to float and reject NaN/inf."""
    v = float(value)
    if not math.isfinite(v):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return v


def check_in_range(value, name, low, high, *, inclusive=True):
    v = check_finite(value, name)
    if inclusive:
        if not (low <= v <= high):
            raise ValueError(f"{name} must be in [{low}, {high}], got {v}")
    else:
        if not (low < v < high):
            raise ValueError(f"{name} must be in ({low}, {high}), got {v}")
    return v


def check_positive(value, name):
    v = check_finite(value, name)
    if v <= 0:
        raise ValueError(f"{name} must be > 0, got {v}")
    return v


def check_positive_int(value, name):
    v = int(value)
    if v != value or v <= 0:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return v
