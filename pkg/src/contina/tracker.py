"""Per-region online conformal interval tracker.

One tracker owns a region's two calibration windows (inflow, outflow) and its
adaptive state, and runs the per-step cycle: build intervals at the current
working quantile level, observe the realized demand, push the new conformity
scores, and update the working miscoverage level alpha_t.

Methods
-------
``cp``         static absolute-residual intervals around the forecast midpoint
``qcp``        static quantile-conformal intervals at level 1 - alpha
``aci_fixed``  online alpha_t with a fixed learning rate ``gamma``
``contina``    online alpha_t with the per-region adaptive rate
               gamma1 / (sqrt(v_t) + epsilon)

The tracker follows the scikit-learn estimator protocol (``fit`` seeds the
windows from calibration scores; ``get_params``/``set_params`` work as usual).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ._params import ParamsMixin
from .errors import EmptyCalibrationError, NotFittedError
from .intervals import (
    PredictionInterval,
    QuantileForecast,
    build_interval_cp,
    build_interval_qcp,
    conformity_score,
)
from .validation import check_in_range, check_positive
from .windows import CalibrationWindow

METHODS = ("cp", "qcp", "aci_fixed", "contina")
ADAPTIVE_METHODS = ("aci_fixed", "contina")


@dataclass(frozen=True)
class StepOutcome:
    """Everything one observe step produced, in object form."""

    intervals: tuple
    covered: tuple
    scores: tuple
    err: float


class ConformalIntervalTracker(ParamsMixin):
    """Online conformal intervals for one region's inflow/outflow pair.

    Parameters
    ----------
    method : {"cp", "qcp", "aci_fixed", "contina"}
    alpha : float
        Target miscoverage level in (0, 1).
    gamma : float
        Fixed learning rate (aci_fixed only).
    gamma1, beta, epsilon : float
        Adaptive-rate hyperparameters (contina only).
    window : int or None
        Calibration window capacity; None keeps the size of the initial
        calibration score set.
    clamp_nonnegative : bool
        Floor interval lower bounds at zero (off by default; the evaluation
        metrics are defined on unclamped intervals).
    """

    def __init__(self, method="contina", alpha=0.1, gamma=0.005, gamma1=0.005,
                 beta=0.99, epsilon=1e-8, window=None, clamp_nonnegative=False):
        if method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {method!r}")
        self.method = method
        self.alpha = check_in_range(alpha, "alpha", 0.0, 1.0, inclusive=False)
        self.gamma = check_positive(gamma, "gamma")
        self.gamma1 = check_positive(gamma1, "gamma1")
        self.beta = check_in_range(beta, "beta", 0.0, 1.0, inclusive=False)
        self.epsilon = check_positive(epsilon, "epsilon")
        if window is not None:
            window = int(window)
            if window < 1:
                raise ValueError(f"window must be >= 1, got {window}")
        self.window = window
        self.clamp_nonnegative = bool(clamp_nonnegative)
        self.windows_ = None

    # -- fitting ---------------------------------------------------------

    def fit(self, calib_scores_in, calib_scores_out):
        """Seed the two calibration windows and reset the adaptive state."""
        scores = (list(calib_scores_in), list(calib_scores_out))
        for flow, s in zip(("in", "out"), scores):
            if not s:
                raise EmptyCalibrationError(f"no calibration scores for flow {flow!r}")
        self.windows_ = tuple(
            CalibrationWindow(self.window or len(s), s) for s in scores
        )
        self.alpha_t_ = float(self.alpha)
        self.moment_ = 0.0
        self.update_sum_ = 0.0
        return self

    def _check_fitted(self):
        if self.windows_ is None:
            raise NotFittedError("tracker must be fitted with calibration scores first")

    @property
    def rate_(self) -> float:
        """Learning rate in effect for the next update (0 for static methods)."""
        self._check_fitted()
        if self.method == "contina":
            return self.gamma1 / (math.sqrt(self.moment_) + self.epsilon)
        if self.method == "aci_fixed":
            return self.gamma
        return 0.0

    # -- object-path API ---------------------------------------------------

    def _effective_pair(self, forecasts) -> tuple:
        """cp collapses the forecast band to its midpoint; others pass through."""
        if self.method == "cp":
            return tuple(QuantileForecast(f.midpoint, f.midpoint) for f in forecasts)
        return tuple(forecasts)

    def predict(self, forecasts) -> tuple:
        """Intervals for the two flows at the current working level.

        ``forecasts`` is the (inflow, outflow) pair of QuantileForecast. The
        tracker state is not modified.
        """
        self._check_fitted()
        level = 1.0 - self.alpha_t_
        out = []
        for fc, win in zip(self._effective_pair(forecasts), self.windows_):
            q = win.quantile_with_rules(level)
            if self.method == "cp":
                out.append(
                    build_interval_cp(fc.lo, q, clamp_nonnegative=self.clamp_nonnegative)
                )
            else:
                out.append(
                    build_interval_qcp(fc, q, clamp_nonnegative=self.clamp_nonnegative)
                )
        return tuple(out)

    def observe(self, forecasts, ys) -> StepOutcome:
        """Full per-step cycle: predict, score both flows, adapt alpha_t."""
        self._check_fitted()
        intervals = self.predict(forecasts)
        eff = self._effective_pair(forecasts)
        scores = (conformity_score(ys[0], eff[0]), conformity_score(ys[1], eff[1]))
        out = self.observe_fast(
            eff[0].lo, eff[0].hi, eff[1].lo, eff[1].hi, float(ys[0]), float(ys[1])
        )
        return StepOutcome(
            intervals=intervals,
            covered=(out[0], out[3]),
            scores=scores,
            err=out[6],
        )

    # -- hot path ----------------------------------------------------------

    def observe_fast(self, lo1, hi1, lo2, hi2, y1, y2):
        """Per-step cycle on raw floats; forecasts must be pre-collapsed for cp.

        Returns (covered1, length1, empty1, covered2, length2, empty2, err).
        Must stay behaviorally identical to predict() + observe(); the replay
        audit re-derives steps through the object path to enforce that.
        """
        level = 1.0 - self.alpha_t_
        clamp = self.clamp_nonnegative
        w1, w2 = self.windows_

        if level < 0.0:
            cov1 = False
            len1 = 0.0
            emp1 = True
            cov2 = False
            len2 = 0.0
            emp2 = True
        else:
            if level > 1.0:
                v1 = 2.0 * w1.max_score
                v2 = 2.0 * w2.max_score
            else:
                v1 = w1.quantile(level)
                v2 = w2.quantile(level)
            low = lo1 - v1
            up = hi1 + v1
            if low > up:
                cov1 = False
                len1 = 0.0
                emp1 = True
            else:
                if clamp:
                    low = low if low > 0.0 else 0.0
                    up = up if up > low else low
                cov1 = low <= y1 <= up
                len1 = up - low
                emp1 = False
            low = lo2 - v2
            up = hi2 + v2
            if low > up:
                cov2 = False
                len2 = 0.0
                emp2 = True
            else:
                if clamp:
                    low = low if low > 0.0 else 0.0
                    up = up if up > low else low
                cov2 = low <= y2 <= up
                len2 = up - low
                emp2 = False

        # Scores are pushed unconditionally; they depend on the base forecast,
        # not on whether the emitted interval was empty.
        w1.push(max(y1 - hi1, lo1 - y1))
        w2.push(max(y2 - hi2, lo2 - y2))

        err = 1.0 - (cov1 + cov2) / 2.0
        if self.method == "contina":
            innov = err - self.alpha
            moment = self.beta * self.moment_ + (1.0 - self.beta) * innov * innov
            delta = (self.gamma1 / (math.sqrt(moment) + self.epsilon)) * (self.alpha - err)
            self.moment_ = moment
            self.alpha_t_ += delta
            self.update_sum_ += delta
        elif self.method == "aci_fixed":
            delta = self.gamma * (self.alpha - err)
            self.alpha_t_ += delta
            self.update_sum_ += delta
        return cov1, len1, emp1, cov2, len2, emp2, err
