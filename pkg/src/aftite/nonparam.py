"""Kaplan-Meier curves and the two-sample log-rank test."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DataError

__all__ = ["StepSurvival", "km_estimate", "logrank_test", "product_limit"]


@dataclass(frozen=True, eq=False)
class StepSurvival:
    """Product-limit curve evaluated at the distinct event times.

    ``censored[j]`` counts censorings in ``[times[j], times[j+1])``;
    censorings before the first event only show up through ``at_risk[0]``.
    """

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    censored: np.ndarray
    group: str = "all"

    def __call__(self, t):
        """Right-continuous evaluation S(t)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = np.where(idx >= 0, self.survival[np.clip(idx, 0, None)], 1.0)
        return out if out.ndim else float(out)

    def left_limit(self, t):
        """S(t-)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="left") - 1
        out = np.where(idx >= 0, self.survival[np.clip(idx, 0, None)], 1.0)
        return out if out.ndim else float(out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["group", "time", "survival", "at_risk", "events", "censored"])
        for row in zip(self.times, self.survival, self.at_risk, self.events, self.censored):
            w.writerow([self.group, f"{row[0]:.10g}", f"{row[1]:.10g}", int(row[2]), int(row[3]), int(row[4])])
        return buf.getvalue()


def product_limit(values, event, label: str = "all") -> StepSurvival:
    """Product-limit estimator over arbitrary real "times" (e.g. residuals).

    Ties: deaths are processed before censorings at the same value.
    """
    return _km_one(np.asarray(values, dtype=float), np.asarray(event).astype(bool), label)


def _km_one(time: np.ndarray, event: np.ndarray, label: str) -> StepSurvival:
    if time.size == 0:
        raise DataError(f"group {label!r} is empty")
    if not event.any():
        raise DataError(f"group {label!r} has no events")
    times, deaths = np.unique(time[event], return_counts=True)
    order = np.sort(time)
    # deaths at t count among those at risk at t; censorings at t are still at risk
    at_risk = order.size - np.searchsorted(order, times, side="left")
    cens_t = np.sort(time[~event])
    upper = np.append(times[1:], np.inf)
    censored = np.searchsorted(cens_t, upper, side="left") - np.searchsorted(cens_t, times, side="left")
    survival = np.cumprod(1.0 - deaths / at_risk)
    return StepSurvival(times, survival, at_risk, deaths, censored, label)


def km_estimate(time, event, group=None):
    """Kaplan-Meier estimate.

    Returns one :class:`StepSurvival` when ``group`` is None, otherwise a
    dict keyed by the string form of each group label (sorted).
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(bool)
    if time.shape != event.shape:
        raise DataError("time and event lengths differ")
    if np.any(time <= 0) or not np.all(np.isfinite(time)):
        raise DataError("times must be finite and > 0")
    if group is None:
        return _km_one(time, event, "all")
    group = np.asarray(group)
    return {str(g): _km_one(time[group == g], event[group == g], str(g)) for g in np.unique(group)}


def logrank_test(time, event, group) -> tuple[float, float]:
    """Two-sample log-rank chi-square (1 df) and its p-value."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(bool)
    group = np.asarray(group)
    labels = np.unique(group)
    if labels.size != 2:
        raise DataError(f"log-rank test needs exactly two groups, got {labels.size}")
    g1 = group == labels[1]
    times, d = np.unique(time[event], return_counts=True)
    if times.size == 0:
        raise DataError("no events")
    sorted_all = np.sort(time)
    sorted_1 = np.sort(time[g1])
    n = sorted_all.size - np.searchsorted(sorted_all, times, side="left")
    n1 = sorted_1.size - np.searchsorted(sorted_1, times, side="left")
    ev1 = np.sort(time[event & g1])
    d1 = np.searchsorted(ev1, times, side="right") - np.searchsorted(ev1, times, side="left")
    expected = d * n1 / n
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(n > 1, d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1), 0.0)
    v = var.sum()
    oe = d1.sum() - expected.sum()
    if v <= 0:
        return 0.0, 1.0
    chi2 = float(oe**2 / v)
    return chi2, float(stats.chi2.sf(chi2, 1))
