"""Individualized treatment effects on the log time-ratio scale.

For a fitted model with treatment coefficient ``b_rx`` and interaction
coefficients ``g_j``, the effect for a covariate profile ``x`` is
``delta = b_rx + sum_j g_j * x_j`` and the time ratio is ``exp(delta)``.
Delta-method intervals use the selector gradient of ``delta`` and the model
covariance.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .aft import FittedModel
from .errors import DataError, NumericalError
from .ingest import AnalysisDataset

__all__ = [
    "Profile",
    "ITEResult",
    "ite_point",
    "ite_gradient",
    "ite_delta_ci",
    "ite_grid",
    "grid_profiles",
    "reference_values",
    "parse_grid",
    "z_quantile",
    "results_to_csv",
    "results_to_json",
    "CONVENTIONS",
]

CONVENTIONS = ("zero", "mean", "raw-mean")


@dataclass(frozen=True)
class Profile:
    """Values of the treatment modifiers. Every interaction covariate of the
    model must be present; non-focal ones are given explicitly (0 is allowed)."""

    values: Mapping[str, float]
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", {k: float(v) for k, v in dict(self.values).items()})

    def __getitem__(self, name: str) -> float:
        return self.values[name]


@dataclass(frozen=True)
class ITEResult:
    profile: Mapping[str, float]
    delta: float
    time_ratio: float
    se_delta: float
    ci_lower: float
    ci_upper: float
    level: float
    method: str
    gradient: tuple[float, ...] = ()
    modifier: str | None = None
    value: float | None = None
    extrapolated: bool = False
    label: str = ""
    extra: Mapping[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["profile"] = dict(self.profile)
        d["gradient"] = list(self.gradient)
        d["extra"] = dict(self.extra)
        return d


def z_quantile(level: float) -> float:
    """Two-sided standard normal critical value for a confidence ``level``."""
    if not 0.0 < level < 1.0:
        raise DataError(f"confidence level must lie in (0, 1), got {level}")
    return float(stats.norm.ppf(0.5 + level / 2.0))


def _effect_columns(fit: FittedModel) -> tuple[int, list[tuple[int, str]]]:
    if "treatment" not in fit.column_roles:
        raise DataError("model has no treatment column")
    t_idx = fit.column_roles.index("treatment")
    inter = [(j, fit.column_parents[j]) for j, role in enumerate(fit.column_roles) if role == "interaction"]
    return t_idx, inter


def _as_profile(profile: Profile | Mapping[str, float]) -> Profile:
    return profile if isinstance(profile, Profile) else Profile(profile)


def ite_gradient(fit: FittedModel, profile: Profile | Mapping[str, float]) -> np.ndarray:
    """d(delta)/d(theta): 1 at the treatment slot, x_j at each ``rx:x_j`` slot, 0 elsewhere."""
    profile = _as_profile(profile)
    t_idx, inter = _effect_columns(fit)
    v = np.zeros(fit.k)
    v[t_idx] = 1.0
    missing = [parent for _, parent in inter if parent not in profile.values]
    if missing:
        raise DataError(f"profile lacks value(s) for interaction covariate(s): {', '.join(missing)}")
    for j, parent in inter:
        v[j] = profile.values[parent]
    return v


def ite_point(fit: FittedModel, profile: Profile | Mapping[str, float]) -> tuple[float, float]:
    """(delta, exp(delta)) for one profile."""
    v = ite_gradient(fit, profile)
    delta = float(v @ fit.theta)
    return delta, math.exp(delta)


def _extrapolated(fit: FittedModel, profile: Profile) -> bool:
    for name, value in profile.values.items():
        rng = fit.covariate_ranges.get(name)
        if rng is not None and not (rng[0] <= value <= rng[1]):
            return True
    return False


def ite_delta_ci(fit: FittedModel, profile: Profile | Mapping[str, float], level: float = 0.95) -> ITEResult:
    profile = _as_profile(profile)
    if fit.cov is None:
        raise NumericalError("model covariance unavailable; delta-method interval cannot be formed")
    v = ite_gradient(fit, profile)
    delta = float(v @ fit.theta)
    var = float(v @ fit.cov @ v)
    scale = float(np.abs(v) @ np.abs(fit.cov) @ np.abs(v))
    if var < -1e-12 * max(scale, 1.0):
        raise NumericalError(f"negative delta-method variance {var:.3g} for profile {dict(profile.values)}")
    se = math.sqrt(max(var, 0.0))
    q = z_quantile(level)
    return ITEResult(
        profile=dict(profile.values),
        delta=delta,
        time_ratio=math.exp(delta),
        se_delta=se,
        ci_lower=math.exp(delta - q * se),
        ci_upper=math.exp(delta + q * se),
        level=level,
        method="delta",
        gradient=tuple(v.tolist()),
        extrapolated=_extrapolated(fit, profile),
        label=profile.label,
    )


def grid_profiles(fit: FittedModel, modifier: str, grid: Iterable[float],
                  refs: Mapping[str, float] | None = None) -> list[Profile]:
    """Profiles sweeping ``modifier`` with the other interaction covariates at ``refs``."""
    _, inter = _effect_columns(fit)
    parents = [p for _, p in inter]
    if modifier not in parents:
        raise DataError(f"{modifier!r} does not interact with treatment in this model "
                        f"(interactions: {', '.join(parents) or 'none'})")
    refs = dict(refs or {})
    base = {p: float(refs.get(p, 0.0)) for p in parents if p != modifier}
    grid = [float(g) for g in grid]
    if not grid:
        raise DataError("grid is empty")
    return [Profile({**base, modifier: g}, label=f"{modifier}={g:g}") for g in grid]


def ite_grid(fit: FittedModel, modifier: str, grid: Iterable[float],
             refs: Mapping[str, float] | None = None, level: float = 0.95) -> list[ITEResult]:
    """Delta-method ITEs along a grid of one modifier, in grid order.

    Non-focal modifiers default to 0 unless given in ``refs``.
    """
    out = []
    for prof in grid_profiles(fit, modifier, grid, refs):
        r = ite_delta_ci(fit, prof, level)
        out.append(_with_modifier(r, modifier))
    return out


def _with_modifier(r: ITEResult, modifier: str) -> ITEResult:
    d = r.to_dict()
    d.update(modifier=modifier, value=r.profile[modifier], gradient=tuple(r.gradient))
    return ITEResult(**d)


def reference_values(data: AnalysisDataset, names: Sequence[str], convention: str = "zero") -> dict[str, float]:
    """Reference values of non-focal modifiers under a named convention.

    ``zero``: 0 for every modifier. ``mean``: sample mean of the model column.
    ``raw-mean``: the covariate value of a patient at the raw-scale means
    (for ``logsz``, ``log(mean(sz) + offset)``).
    """
    if convention == "zero":
        return {n: 0.0 for n in names}
    if convention == "mean":
        return {n: float(data.column(n).mean()) for n in names}
    if convention == "raw-mean":
        prof = data.raw_mean_profile()
        return {n: prof[n] for n in names}
    raise DataError(f"unknown reference convention {convention!r}; expected one of {', '.join(CONVENTIONS)}")


def parse_grid(text: str) -> list[float]:
    """``start:end:step`` (end included when reachable) or a comma list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise DataError(f"grid {text!r} must be start:end:step")
        start, end, step = (float(p) for p in parts)
        if step <= 0 or end < start:
            raise DataError(f"grid {text!r} needs step > 0 and end >= start")
        count = int(math.floor((end - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(count)]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise DataError(f"cannot parse grid {text!r}") from None


RESULT_COLUMNS = ("modifier", "value", "delta", "time_ratio", "se_delta", "ci_lower", "ci_upper",
                  "method", "level", "extrapolated", "reference")


def _reference_echo(r: ITEResult) -> str:
    return ";".join(f"{k}={v:.6g}" for k, v in sorted(r.profile.items()) if k != r.modifier)


def results_to_csv(results: Sequence[ITEResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(RESULT_COLUMNS)
    for r in results:
        w.writerow([r.modifier or "", f"{r.value:.6g}" if r.value is not None else "",
                    f"{r.delta:.6f}", f"{r.time_ratio:.6f}", f"{r.se_delta:.6f}",
                    f"{r.ci_lower:.6f}", f"{r.ci_upper:.6f}", r.method, f"{r.level:g}",
                    int(r.extrapolated), _reference_echo(r)])
    return buf.getvalue()


def results_to_json(results: Sequence[ITEResult]) -> str:
    return json.dumps([r.to_dict() for r in results], indent=2)
