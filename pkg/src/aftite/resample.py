"""Nonparametric bootstrap of the fit -> ITE pipeline.

Each replicate resamples whole patient rows with replacement and refits the
model. A replicate's generator is derived from ``(seed, b)`` alone, so the
replicate matrix does not depend on execution order or worker count.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .aft import FitOptions, FittedModel, fit, fit_design
from .design import ModelSpec, build_design
from .errors import AftiteError, BootstrapFailureError, DataError, NumericalError
from .ingest import AnalysisDataset
from .ite import ITEResult, Profile, _as_profile, _extrapolated, ite_gradient

__all__ = ["BootstrapPlan", "BootstrapDistribution", "bootstrap_ite", "percentile", "replicate_rng"]


def percentile(values, q: float) -> float:
    """Linear-interpolation quantile of the order statistics.

    With m sorted values x_(1..m), h = q (m - 1) + 1 and the result is
    x_(floor h) + (h - floor h) (x_(floor h + 1) - x_(floor h)).
    """
    x = np.sort(np.asarray(values, dtype=float).ravel())
    m = x.size
    if m == 0:
        raise DataError("percentile of an empty vector")
    if not 0.0 <= q <= 1.0:
        raise DataError(f"quantile must lie in [0, 1], got {q}")
    h = q * (m - 1) + 1
    lo = int(math.floor(h))
    if lo >= m:
        return float(x[-1])
    return float(x[lo - 1] + (h - lo) * (x[lo] - x[lo - 1]))


def replicate_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))


@dataclass(frozen=True)
class BootstrapPlan:
    B: int = 1000
    seed: int = 20250101
    level: float = 0.95
    max_failure_fraction: float = 0.05
    stratify: bool = False
    warm_start: bool = True
    workers: int = 1
    fit_options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        if self.B < 1:
            raise DataError("bootstrap needs B >= 1")
        if not 0.0 <= self.max_failure_fraction <= 0.05:
            raise DataError("tolerated failure fraction must lie in [0, 0.05]")
        if not 0 <= self.seed < 2**64:
            raise DataError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class BootstrapDistribution:
    deltas: np.ndarray  # (B, n_profiles); NaN rows for failed replicates
    success: np.ndarray  # (B,) bool
    failures: tuple[tuple[int, str], ...]
    seeds: tuple[int, ...]
    profiles: tuple[Profile, ...]

    @property
    def B(self) -> int:
        return len(self.success)

    @property
    def n_success(self) -> int:
        return int(self.success.sum())

    @property
    def n_failed(self) -> int:
        return self.B - self.n_success

    def to_csv(self) -> str:
        """Long-format replicate matrix: replicate, profile_id, delta."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["replicate", "profile_id", "profile", "delta"])
        for b in range(self.B):
            if not self.success[b]:
                continue
            for j, prof in enumerate(self.profiles):
                w.writerow([b + 1, j, prof.label or j, repr(float(self.deltas[b, j]))])
        return buf.getvalue()


# worker-side state, set once per process
_STATE: dict = {}


def _init(state):
    _STATE.clear()
    _STATE.update(state)


def _resample_weights(rng: np.random.Generator, z: np.ndarray, stratify: bool) -> np.ndarray:
    n = z.size
    if not stratify:
        idx = rng.integers(0, n, n)
    else:
        idx = np.concatenate([rng.choice(np.flatnonzero(z == arm), size=int((z == arm).sum()), replace=True)
                              for arm in (0, 1)])
    return np.bincount(idx, minlength=n).astype(float)


def _replicate(b: int):
    s = _STATE
    rng = replicate_rng(s["seed"], b)
    w = _resample_weights(rng, s["z"], s["stratify"])
    if np.dot(w, s["event"]) == 0:
        return b, None, "zero_events"
    try:
        f = fit_design(s["design"], s["time"], s["event"], s["dist"], s["spec"], s["opts"], weights=w)
    except AftiteError as exc:
        return b, None, f"{exc.kind}: {exc}"
    if not f.converged:
        return b, None, "not_converged"
    return b, s["V"] @ f.theta, None


def _replicate_seed(seed: int, b: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(b,)).generate_state(1, np.uint64)[0])


def bootstrap_ite(
    data: AnalysisDataset,
    spec: ModelSpec,
    dist: str,
    profiles: Sequence[Profile],
    plan: BootstrapPlan | None = None,
    original: FittedModel | None = None,
) -> tuple[list[ITEResult], BootstrapDistribution]:
    """Percentile bootstrap intervals for the ITE of each profile.

    Failed replicates (no events, rank deficient, non-convergent) are
    excluded and logged; if their share exceeds the plan's tolerance a
    :class:`BootstrapFailureError` is raised.
    """
    plan = plan or BootstrapPlan()
    profiles = tuple(_as_profile(p) for p in profiles)
    if not profiles:
        raise DataError("no profiles given")
    if original is None:
        original = fit(data, spec, dist, plan.fit_options)
    if not original.converged:
        raise NumericalError("model does not converge on the original sample")
    V = np.array([ite_gradient(original, p) for p in profiles])
    design = build_design(data, spec)
    opts = plan.fit_options
    if plan.warm_start:
        opts = replace(opts, start=tuple(original.theta))
    state = dict(seed=plan.seed, z=np.asarray(data.z), event=np.asarray(data.event), time=np.asarray(data.time),
                 design=design, dist=dist, spec=spec, opts=opts, V=V, stratify=plan.stratify)

    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers, initializer=_init, initargs=(state,)) as ex:
            outcomes = list(ex.map(_replicate, range(plan.B), chunksize=max(1, plan.B // (4 * plan.workers))))
    else:
        _init(state)
        outcomes = [_replicate(b) for b in range(plan.B)]

    deltas = np.full((plan.B, len(profiles)), np.nan)
    success = np.zeros(plan.B, dtype=bool)
    failures = []
    for b, d, reason in sorted(outcomes, key=lambda o: o[0]):
        if d is None:
            failures.append((b, reason))
        else:
            deltas[b] = d
            success[b] = True
    dist_out = BootstrapDistribution(
        deltas=deltas, success=success, failures=tuple(failures),
        seeds=tuple(_replicate_seed(plan.seed, b) for b in range(plan.B)), profiles=profiles,
    )
    if dist_out.n_failed > plan.max_failure_fraction * plan.B:
        raise BootstrapFailureError(
            f"{dist_out.n_failed} of {plan.B} bootstrap replicates failed "
            f"(tolerance {plan.max_failure_fraction:.0%}); first: {failures[:3]}")

    lo_q, hi_q = (1 - plan.level) / 2, (1 + plan.level) / 2
    good = deltas[success]
    results = []
    for j, prof in enumerate(profiles):
        col = good[:, j]
        delta = float(V[j] @ original.theta)
        results.append(ITEResult(
            profile=dict(prof.values),
            delta=delta,
            time_ratio=math.exp(delta),
            se_delta=float(col.std(ddof=1)) if col.size > 1 else float("nan"),
            ci_lower=math.exp(percentile(col, lo_q)),
            ci_upper=math.exp(percentile(col, hi_q)),
            level=plan.level,
            method="bootstrap",
            gradient=tuple(V[j].tolist()),
            extrapolated=_extrapolated(original, prof),
            label=prof.label,
            extra={"n_success": dist_out.n_success, "n_failed": dist_out.n_failed},
        ))
    return results, dist_out
