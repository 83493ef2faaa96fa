"""Residual diagnostics for fitted AFT models.

Standardized residuals ``z = (log t - eta) / sigma`` follow the error law
when the model is right, with censoring carried over. Two views are offered:
a Kaplan-Meier curve of the residuals against the law's survival ``G``, and
a Q-Q pairing of Kaplan-Meier time quantiles with model quantiles.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .aft import FittedModel
from .design import build_design
from .errors import DataError
from .ingest import AnalysisDataset
from .laws import get_law
from .nonparam import StepSurvival, km_estimate, product_limit

__all__ = [
    "ResidualSet",
    "Overlay",
    "QQPoints",
    "aft_residuals",
    "residual_overlay",
    "sup_distance",
    "qq_points",
    "qq_slope",
    "mixture_quantiles",
    "QQ_CONVENTION",
]

QQ_CONVENTION = "population-averaged model survival inverted at KM levels"


@dataclass(frozen=True, eq=False)
class ResidualSet:
    z: np.ndarray
    event: np.ndarray
    dist: str

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        event = np.asarray(self.event).astype(np.int8)
        if z.shape != event.shape:
            raise DataError("residuals and event flags differ in length")
        if not np.all(np.isfinite(z)):
            raise DataError("residuals must be finite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "event", event)

    def __len__(self) -> int:
        return self.z.size


def _linear_predictor(fit: FittedModel, data: AnalysisDataset) -> np.ndarray:
    design = build_design(data, fit.spec, check_rank=False)
    if tuple(design.names) != tuple(fit.column_names):
        raise DataError(f"design columns {design.names} do not match the fitted model's {list(fit.column_names)}")
    return design.values @ fit.params.beta


def aft_residuals(fit: FittedModel, data: AnalysisDataset) -> ResidualSet:
    eta = _linear_predictor(fit, data)
    z = (np.log(data.time) - eta) / fit.params.sigma
    return ResidualSet(z, data.event, fit.dist)


@dataclass(frozen=True, eq=False)
class Overlay:
    km: StepSurvival
    grid: np.ndarray
    reference: np.ndarray  # G(grid)
    sup: float
    dist: str

    def to_csv(self) -> str:
        """Both series on one grid: KM jump points plus the reference sampling."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["z", "km", "model"])
        law = get_law(self.dist)
        for zv in self.grid:
            w.writerow([f"{zv:.8g}", f"{self.km(zv):.8g}", f"{float(law.sf(zv)):.8g}"])
        return buf.getvalue()


def sup_distance(km: StepSurvival, dist: str, lower: float, upper: float) -> float:
    """sup over [lower, upper] of |KM(z) - G(z)|.

    G is continuous and KM is a step function, so the supremum is attained at
    a jump (from either side) or at an end of the interval.
    """
    law = get_law(dist)
    t = km.times[(km.times >= lower) & (km.times <= upper)]
    g = law.sf(t)
    cand = [np.abs(km(t) - g), np.abs(km.left_limit(t) - g)]
    ends = np.array([lower, upper])
    cand.append(np.abs(km(ends) - law.sf(ends)))
    return float(max(np.max(c) if np.size(c) else 0.0 for c in cand))


def residual_overlay(res: ResidualSet, points: int = 200) -> Overlay:
    """Product-limit curve of the residuals with the error law's survival.

    The horizontal axis is z itself (not exp(z)).
    """
    if not res.event.any():
        raise DataError("all residuals are censored; the overlay needs at least one event")
    km = product_limit(res.z, res.event, label="residuals")
    lo, hi = float(res.z.min()), float(res.z.max())
    grid = np.union1d(np.linspace(lo, hi, points), km.times)
    ref = get_law(res.dist).sf(grid)
    return Overlay(km, grid, ref, sup_distance(km, res.dist, lo, hi), res.dist)


@dataclass(frozen=True, eq=False)
class QQPoints:
    level: np.ndarray  # KM survival level
    model: np.ndarray  # model time quantile
    empirical: np.ndarray  # KM time quantile
    convention: str = QQ_CONVENTION

    def __len__(self) -> int:
        return self.level.size

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["survival_level", "model_quantile", "empirical_quantile"])
        for row in zip(self.level, self.model, self.empirical):
            w.writerow([f"{v:.8g}" for v in row])
        return buf.getvalue()


def mixture_quantiles(levels, eta, sigma: float, dist: str) -> np.ndarray:
    """Times t with mean_i G((log t - eta_i) / sigma) = level, one per level."""
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    law = get_law(dist)
    # bracket wide enough for any level in (0, 1)
    lo = float(eta.min()) - 60 * sigma
    hi = float(eta.max()) + 60 * sigma
    out = []
    for s in np.atleast_1d(levels):
        if not 0.0 < s < 1.0:
            raise DataError(f"survival level must lie in (0, 1), got {s}")
        root = optimize.brentq(lambda u: float(np.mean(law.sf((u - eta) / sigma))) - s, lo, hi, xtol=1e-12)
        out.append(math.exp(root))
    return np.array(out)


def qq_points(fit: FittedModel, data: AnalysisDataset) -> QQPoints:
    """Model vs Kaplan-Meier time quantiles at every KM level reached by an event.

    The model side averages the per-subject survival curves over the sample
    and inverts that mixture at the KM level.
    """
    eta = _linear_predictor(fit, data)
    km = km_estimate(data.time, data.event)
    if km.times.size < 2:
        raise DataError("Q-Q needs at least two distinct event times")
    keep = (km.survival > 0) & (km.survival < 1)
    levels, emp = km.survival[keep], km.times[keep]
    return QQPoints(levels, mixture_quantiles(levels, eta, fit.params.sigma, fit.dist), emp)


def qq_slope(points: QQPoints, middle: float = 0.8) -> tuple[float, float]:
    """OLS slope (and SE) of log empirical on log model quantiles.

    Restricted to the central ``middle`` share of the points; a slope far
    from 1 signals a misspecified scale.
    """
    m = len(points)
    cut = int(math.floor(m * (1 - middle) / 2))
    sel = slice(cut, m - cut)
    x = np.log(points.model[sel])
    y = np.log(points.empirical[sel])
    if x.size < 3:
        raise DataError("too few Q-Q points for a slope")
    r = stats.linregress(x, y)
    return float(r.slope), float(r.stderr)
