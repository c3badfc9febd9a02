"""Conformity scores and prediction-interval construction.

The score of a realized value against a quantile forecast (lo, hi) is
``max(y - hi, lo - y)``: negative iff y lies strictly inside the band, zero on
the boundary. Widening both forecast quantiles by the calibrated score
quantile produces the prediction interval; an empty quantile result produces
an empty interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .windows import QuantileResult
from .validation import check_finite


@dataclass(frozen=True)
class QuantileForecast:
    """A base predictor's (lower, upper) quantile pair for one cell.

    Crossed inputs (lo > hi) are swapped at construction and flagged.
    """

    lo: float
    hi: float
    crossed: bool = False

    def __post_init__(self):
        lo = check_finite(self.lo, "lo")
        hi = check_finite(self.hi, "hi")
        if lo > hi:
            lo, hi = hi, lo
            object.__setattr__(self, "crossed", True)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class PredictionInterval:
    """A closed interval [low, up], or the empty set."""

    low: float = math.nan
    up: float = math.nan
    empty: bool = False

    def __post_init__(self):
        if not self.empty:
            low = check_finite(self.low, "low")
            up = check_finite(self.up, "up")
            if low > up:
                raise ValueError(f"interval bounds out of order: [{low}, {up}]")

    @classmethod
    def empty_set(cls) -> "PredictionInterval":
        return cls(empty=True)


def conformity_score(y: float, forecast: QuantileForecast) -> float:
    """max(y - hi, lo - y); how badly the band (lo, hi) misses y."""
    y = check_finite(y, "y")
    return max(y - forecast.hi, forecast.lo - y)


def _band(low: float, up: float, clamp_nonnegative: bool) -> PredictionInterval:
    # A widening negative enough to invert the band leaves no admissible y.
    if low > up:
        return PredictionInterval.empty_set()
    if clamp_nonnegative:
        low = max(low, 0.0)
        up = max(up, low)
    return PredictionInterval(low, up)


def build_interval_qcp(
    forecast: QuantileForecast,
    q: QuantileResult,
    *,
    clamp_nonnegative: bool = False,
) -> PredictionInterval:
    """Widen a quantile forecast by the calibrated score quantile.

    The optional non-negativity clamp floors the lower bound at zero for
    count-valued demand; it is off by default because the evaluation metrics
    are defined on the unclamped interval.
    """
    if q.is_empty:
        return PredictionInterval.empty_set()
    v = q.widening
    return _band(forecast.lo - v, forecast.hi + v, clamp_nonnegative)


def build_interval_cp(
    point: float,
    q: QuantileResult,
    *,
    clamp_nonnegative: bool = False,
) -> PredictionInterval:
    """Symmetric interval around a point prediction (absolute-residual CP)."""
    point = check_finite(point, "point")
    if q.is_empty:
        return PredictionInterval.empty_set()
    v = q.widening
    return _band(point - v, point + v, clamp_nonnegative)


def contains(interval: PredictionInterval, y: float) -> bool:
    """Closed-interval membership; the empty interval contains nothing."""
    if interval.empty:
        return False
    return interval.low <= y <= interval.up


def interval_length(interval: PredictionInterval) -> float:
    """up - low for a band; 0 for the empty interval (callers flag emptiness)."""
    if interval.empty:
        return 0.0
    return interval.up - interval.low
