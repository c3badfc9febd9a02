"""Evaluation metrics over a completed run ledger, plus the theoretical bounds.

A ledger stores one record per (t, region, flow): whether the emitted interval
covered the realized demand, its length, and whether it was the empty set.
``average_coverage``, ``min_regional_coverage`` and ``mean_length`` are the
three headline metrics; ``daily_regional_stats`` supports dispersion plots of
per-region coverage; ``coverage_gap_constant`` and ``worst_region_bound``
evaluate the guarantees the adaptive method is expected to satisfy:

* |cov - (1 - alpha)| <= c / T with
  c = 1/gamma1 + 2 / (alpha * sqrt((1 - beta) * k) + epsilon);
* minRC >= 1 - alpha - c1/T - sqrt(c2 * K * log(n) / T) for streams whose
  per-flow errors are independent beyond a dependence window of K steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .adaptation import AdaptHyperParams, alpha_drift_bounds
from .errors import LedgerError
from .streams import FLOWS
from .validation import check_in_range, check_positive, check_positive_int


class RunLedger:
    """Columnar per-step records of a replay: (t, region, flow) outcomes."""

    def __init__(self, region_ids, t, region_idx, flow_idx, covered, length, empty):
        self.region_ids = tuple(region_ids)
        self.t = np.asarray(t, dtype=np.int64)
        self.region_idx = np.asarray(region_idx, dtype=np.intp)
        self.flow_idx = np.asarray(flow_idx, dtype=np.intp)
        self.covered = np.asarray(covered, dtype=bool)
        self.length = np.asarray(length, dtype=np.float64)
        self.empty = np.asarray(empty, dtype=bool)
        n = len(self.t)
        for name in ("region_idx", "flow_idx", "covered", "length", "empty"):
            if len(getattr(self, name)) != n:
                raise LedgerError(f"ledger column {name} has mismatched length")
        if n and (self.length < 0).any():
            raise LedgerError("ledger contains negative interval lengths")
        self._complete = None

    @classmethod
    def from_records(cls, records, region_ids=None):
        """Build a ledger from (t, region, flow, covered, length, empty) tuples."""
        records = list(records)
        if region_ids is None:
            region_ids = sorted({r[1] for r in records}, key=repr)
        index = {r: i for i, r in enumerate(region_ids)}
        return cls(
            region_ids=region_ids,
            t=[r[0] for r in records],
            region_idx=[index[r[1]] for r in records],
            flow_idx=[FLOWS.index(r[2]) for r in records],
            covered=[r[3] for r in records],
            length=[r[4] for r in records],
            empty=[r[5] for r in records],
        )

    @property
    def n_regions(self) -> int:
        return len(self.region_ids)

    @property
    def horizon(self) -> int:
        return len(np.unique(self.t))

    @property
    def records(self):
        """Row view as (t, region, flow, covered, length, empty) tuples."""
        return [
            (
                int(self.t[k]),
                self.region_ids[self.region_idx[k]],
                FLOWS[self.flow_idx[k]],
                bool(self.covered[k]),
                float(self.length[k]),
                bool(self.empty[k]),
            )
            for k in range(len(self.t))
        ]

    def validate_complete(self) -> None:
        """Require exactly two flow records for every (t, region) pair."""
        if self._complete:
            return
        if len(self.t) == 0:
            raise LedgerError("ledger is empty")
        expected = 2 * self.n_regions * self.horizon
        if len(self.t) != expected:
            self._name_missing()
        key = (self.t * self.n_regions + self.region_idx) * 2 + self.flow_idx
        if len(np.unique(key)) != expected:
            self._name_missing()
        self._complete = True

    def _name_missing(self):
        seen = {}
        for k in range(len(self.t)):
            pair = (int(self.t[k]), int(self.region_idx[k]))
            seen[pair] = seen.get(pair, 0) + 1
        for t in np.unique(self.t):
            for i, region in enumerate(self.region_ids):
                if seen.get((int(t), i), 0) != 2:
                    raise LedgerError(
                        f"ledger incomplete at (t={int(t)}, region={region}): "
                        f"{seen.get((int(t), i), 0)} of 2 flow records"
                    )
        raise LedgerError("ledger holds duplicate (t, region, flow) records")


def average_coverage(ledger: RunLedger) -> float:
    """Fraction of all (t, region, flow) cells whose interval covered demand."""
    ledger.validate_complete()
    return float(ledger.covered.mean())


class RegionalCoverage(NamedTuple):
    value: float
    region: object


def min_regional_coverage(ledger: RunLedger) -> RegionalCoverage:
    """Worst per-region coverage; ties break toward the smallest region id."""
    ledger.validate_complete()
    per_region = np.zeros(ledger.n_regions)
    np.add.at(per_region, ledger.region_idx, ledger.covered)
    per_region /= 2.0 * ledger.horizon
    rank = {
        i: pos
        for pos, i in enumerate(
            sorted(range(ledger.n_regions), key=lambda i: _sort_key(ledger.region_ids[i]))
        )
    }
    best = min(range(ledger.n_regions), key=lambda i: (per_region[i], rank[i]))
    return RegionalCoverage(float(per_region[best]), ledger.region_ids[best])


def _sort_key(region):
    s = str(region)
    return (0, int(s), "") if s.lstrip("-").isdigit() else (1, 0, s)


def regional_coverages(ledger: RunLedger) -> dict:
    """Per-region coverage over the whole ledger."""
    ledger.validate_complete()
    per_region = np.zeros(ledger.n_regions)
    np.add.at(per_region, ledger.region_idx, ledger.covered)
    per_region /= 2.0 * ledger.horizon
    return {r: float(per_region[i]) for i, r in enumerate(ledger.region_ids)}


def mean_length(ledger: RunLedger) -> float:
    """Mean interval length over all cells (empty intervals count 0)."""
    ledger.validate_complete()
    return float(ledger.length.mean())


def empty_rate(ledger: RunLedger) -> float:
    """Fraction of cells whose interval was the empty set."""
    ledger.validate_complete()
    return float(ledger.empty.mean())


class DailyStat(NamedTuple):
    day: int
    mean_coverage: float
    std_coverage: float


class DailyStats(NamedTuple):
    rows: list
    dropped_steps: int


def daily_regional_stats(ledger: RunLedger, steps_per_day: int) -> DailyStats:
    """Per-day mean and population std of per-region daily coverage.

    Days are counted from the ledger's first step; a trailing partial day is
    dropped and reported through ``dropped_steps``.
    """
    check_positive_int(steps_per_day, "steps_per_day")
    cov, dropped = _daily_coverage_grid(ledger, steps_per_day)
    rows = [
        DailyStat(day=d, mean_coverage=float(cov[d].mean()), std_coverage=float(cov[d].std()))
        for d in range(cov.shape[0])
    ]
    return DailyStats(rows=rows, dropped_steps=dropped)


def _daily_coverage_grid(ledger: RunLedger, steps_per_day: int):
    """(n_days, n_regions) coverage for whole days + count of dropped steps."""
    ledger.validate_complete()
    times = np.unique(ledger.t)
    n_days = len(times) // steps_per_day
    dropped = len(times) - n_days * steps_per_day
    day = np.searchsorted(times, ledger.t) // steps_per_day
    mask = day < n_days
    hits = np.zeros((n_days, ledger.n_regions))
    np.add.at(hits, (day[mask], ledger.region_idx[mask]), ledger.covered[mask])
    return hits / (2.0 * steps_per_day), dropped


def daily_regional_coverage(ledger: RunLedger, steps_per_day: int):
    """(day, region, coverage) triples for whole days, for dispersion plots."""
    check_positive_int(steps_per_day, "steps_per_day")
    cov, _ = _daily_coverage_grid(ledger, steps_per_day)
    return [
        (d, region, float(cov[d, i]))
        for d in range(cov.shape[0])
        for i, region in enumerate(ledger.region_ids)
    ]


class GapConstant(NamedTuple):
    value: float
    degenerate: bool


def coverage_gap_constant(hp: AdaptHyperParams) -> GapConstant:
    """The constant c in the average-coverage gap bound |cov - (1-a)| <= c/T.

    c = 1/gamma1 + 2/(alpha * sqrt((1 - beta) * k) + epsilon), with k from
    ``alpha_drift_bounds``. At target_alpha = 0.5 the constant degenerates
    (k = 0) and the flag is set.
    """
    bounds = alpha_drift_bounds(hp)
    denom = hp.target_alpha * math.sqrt((1.0 - hp.beta) * bounds.k) + hp.epsilon
    return GapConstant(value=1.0 / hp.gamma1 + 2.0 / denom, degenerate=bounds.k == 0.0)


@dataclass(frozen=True)
class BoundParams:
    """Inputs of the worst-region coverage bound."""

    c1: float
    n_regions: int
    horizon: int
    k_lag: int = 1
    c2: float = 0.25

    def __post_init__(self):
        check_positive(self.c1, "c1")
        check_positive(self.c2, "c2")
        check_positive_int(self.k_lag, "k_lag")
        check_positive_int(self.n_regions, "n_regions")
        check_positive_int(self.horizon, "horizon")


class RegionBound(NamedTuple):
    value: float
    log_term_dropped: bool


def worst_region_bound(bp: BoundParams, alpha: float) -> RegionBound:
    """1 - alpha - c1/T - sqrt(c2 * K * log(n) / T).

    With a single region the log term vanishes; the flag records that the
    multi-region correction was dropped.
    """
    check_in_range(alpha, "alpha", 0.0, 1.0, inclusive=False)
    if bp.n_regions < 2:
        return RegionBound(value=1.0 - alpha - bp.c1 / bp.horizon, log_term_dropped=True)
    correction = math.sqrt(bp.c2 * bp.k_lag * math.log(bp.n_regions) / bp.horizon)
    return RegionBound(value=1.0 - alpha - bp.c1 / bp.horizon - correction, log_term_dropped=False)
