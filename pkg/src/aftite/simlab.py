"""Synthetic trials with known truth, for checking estimators and intervals.

Both potential log-times share the same error draw, so the subject-level
effect ``log T(1) - log T(0)`` equals the true linear contrast exactly.
Every simulation gets its own generator derived from ``(seed, index)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .aft import FitOptions, fit
from .design import ModelSpec, preset_spec
from .errors import AftiteError, DataError, NumericalError
from .ingest import AnalysisDataset
from .ite import Profile, _as_profile, ite_delta_ci
from .laws import get_law
from .resample import BootstrapPlan, bootstrap_ite

__all__ = [
    "CovariateGenerator",
    "Censoring",
    "TrueParams",
    "SimulatedTrial",
    "CoverageResult",
    "simulate_trial",
    "coverage_study",
    "censoring_fraction",
    "default_truth",
    "sim_rng",
]

_KINDS = ("uniform", "normal", "bernoulli", "shifted_lognormal", "constant")


@dataclass(frozen=True)
class CovariateGenerator:
    """One independent covariate draw.

    ``uniform``: a, b are the bounds. ``normal``: a is the mean, b the SD.
    ``bernoulli``: a is the success probability. ``shifted_lognormal``:
    ``a + exp(N(mu, s))`` clipped to [lo, hi]. ``constant``: always a.
    """

    kind: str
    a: float = 0.0
    b: float = 1.0
    mu: float = 0.0
    s: float = 1.0
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DataError(f"unknown covariate generator {self.kind!r}; expected one of {', '.join(_KINDS)}")
        if self.kind == "uniform" and not self.a < self.b:
            raise DataError("uniform generator needs a < b")
        if self.kind == "normal" and self.b < 0:
            raise DataError("normal generator needs sd >= 0")
        if self.kind == "bernoulli" and not 0.0 <= self.a <= 1.0:
            raise DataError("bernoulli probability must lie in [0, 1]")

    @property
    def degenerate(self) -> bool:
        return (self.kind == "constant" or (self.kind == "normal" and self.b == 0)
                or (self.kind == "bernoulli" and self.a in (0.0, 1.0)))

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, n)
        if self.kind == "normal":
            return rng.normal(self.a, self.b, n)
        if self.kind == "bernoulli":
            return (rng.uniform(size=n) < self.a).astype(float)
        if self.kind == "shifted_lognormal":
            return np.clip(self.a + np.exp(rng.normal(self.mu, self.s, n)), self.lo, self.hi)
        return np.full(n, float(self.a))

    def to_dict(self) -> dict[str, Any]:
        d = {"kind": self.kind, "a": self.a, "b": self.b, "mu": self.mu, "s": self.s}
        d["lo"] = None if math.isinf(self.lo) else self.lo
        d["hi"] = None if math.isinf(self.hi) else self.hi
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CovariateGenerator":
        d = dict(d)
        for key, inf in (("lo", -math.inf), ("hi", math.inf)):
            if d.get(key) is None:
                d[key] = inf
        return cls(**d)


@dataclass(frozen=True)
class Censoring:
    """Administrative cutoff and/or independent exponential dropout."""

    admin: float | None = None
    rate: float = 0.0

    def __post_init__(self):
        if self.admin is not None and self.admin <= 0:
            raise DataError("administrative cutoff must be > 0")
        if self.rate < 0:
            raise DataError("censoring rate must be >= 0")

    @property
    def enabled(self) -> bool:
        return self.admin is not None or self.rate > 0

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        c = np.full(n, np.inf)
        if self.rate > 0:
            c = rng.exponential(1.0 / self.rate, n)
        if self.admin is not None:
            c = np.minimum(c, self.admin)
        return c


@dataclass(frozen=True)
class TrueParams:
    """Generating model. ``beta`` follows ``spec.column_layout()``."""

    spec: ModelSpec
    beta: tuple[float, ...]
    sigma: float
    dist: str = "weibull"
    covariates: Mapping[str, CovariateGenerator] = field(default_factory=dict)
    censoring: Censoring = field(default_factory=Censoring)
    allocation: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "covariates", dict(self.covariates))
        get_law(self.dist)
        layout = self.spec.column_layout()
        if len(self.beta) != len(layout):
            raise DataError(f"beta has {len(self.beta)} entries but the model has {len(layout)} columns")
        if not self.sigma > 0:
            raise DataError("sigma must be > 0")
        if not 0.0 < self.allocation < 1.0:
            raise DataError("allocation must lie in (0, 1)")
        missing = [n for n in self.spec.main_effects if n not in self.covariates]
        if missing:
            raise DataError(f"no generator for covariate(s): {', '.join(missing)}")
        # a covariate that never varies cannot carry a nonzero effect
        for (name, role, parent), b in zip(layout, self.beta):
            if role in ("covariate", "interaction") and self.covariates[parent].degenerate and b != 0:
                raise DataError(f"covariate {parent!r} has zero variance but coefficient {name!r} = {b}")

    @property
    def names(self) -> list[str]:
        return [name for name, _, _ in self.spec.column_layout()]

    def coef(self, name: str) -> float:
        return self.beta[self.names.index(name)]

    def true_delta(self, profile: Profile | Mapping[str, float]) -> float:
        prof = _as_profile(profile)
        d = 0.0
        for (name, role, parent), b in zip(self.spec.column_layout(), self.beta):
            if role == "treatment":
                d += b
            elif role == "interaction":
                d += b * prof.values[parent]
        return d

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "beta": dict(zip(self.names, self.beta)),
            "sigma": self.sigma,
            "dist": self.dist,
            "covariates": {k: g.to_dict() for k, g in self.covariates.items()},
            "censoring": {"admin": self.censoring.admin, "rate": self.censoring.rate},
            "allocation": self.allocation,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrueParams":
        spec = ModelSpec.from_dict(d["spec"])
        beta = d["beta"]
        if isinstance(beta, Mapping):
            names = [name for name, _, _ in spec.column_layout()]
            extra = set(beta) - set(names)
            if extra or len(beta) != len(names):
                raise DataError(f"beta keys must be exactly {names}")
            beta = [beta[n] for n in names]
        cens = d.get("censoring") or {}
        return cls(
            spec=spec,
            beta=tuple(beta),
            sigma=float(d["sigma"]),
            dist=d.get("dist", "weibull"),
            covariates={k: CovariateGenerator.from_dict(v) for k, v in d.get("covariates", {}).items()},
            censoring=Censoring(cens.get("admin"), float(cens.get("rate", 0.0))),
            allocation=float(d.get("allocation", 0.5)),
        )

    @classmethod
    def from_json(cls, text: str) -> "TrueParams":
        return cls.from_dict(json.loads(text))


def default_generators() -> dict[str, CovariateGenerator]:
    return {
        "age": CovariateGenerator("uniform", 45.0, 88.0),
        "logsz": CovariateGenerator("shifted_lognormal", a=1.099, mu=0.2, s=0.5, lo=1.099, hi=4.248),
        "wt_std": CovariateGenerator("normal", 0.0, 1.0),
        "hg": CovariateGenerator("normal", 0.0, 1.0),
        "sg": CovariateGenerator("normal", 0.0, 1.0),
        "ekg_num": CovariateGenerator("normal", 0.0, 1.0),
        "hx": CovariateGenerator("bernoulli", 0.4),
        "stage4": CovariateGenerator("bernoulli", 0.4),
    }


# Rounded Model 2A Weibull estimates from the bundled trial; the censoring
# pair gives about 28% censored subjects under default_generators().
_MODEL2A_BETA = {
    "(Intercept)": 4.7, "age": 0.007, "wt_std": 0.13, "hg": 0.065, "logsz": -0.325, "sg": -0.10,
    "hx": -0.42, "ekg_num": -0.074, "stage4": 0.0, "rx": 3.41, "rx:age": -0.055, "rx:logsz": 0.273,
}
_DEFAULT_CENSORING = Censoring(admin=120.0, rate=0.001)


def default_truth(preset: str = "model2a", dist: str = "weibull") -> TrueParams:
    """Truth with Model 2A-like signs and magnitudes for the given preset."""
    spec = preset_spec(preset)
    beta = [_MODEL2A_BETA.get(name, 0.0) for name, _, _ in spec.column_layout()]
    return TrueParams(spec, tuple(beta), 0.94, dist, default_generators(), _DEFAULT_CENSORING, 0.5)


def sim_rng(seed: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass(frozen=True, eq=False)
class SimulatedTrial:
    data: AnalysisDataset
    t0: np.ndarray
    t1: np.ndarray
    censor_time: np.ndarray
    true_delta: np.ndarray

    def audit_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["subject", "z", "T0", "T1", "C", "true_delta"])
        for i in range(self.data.n):
            w.writerow([self.data.ids[i], int(self.data.z[i]), repr(float(self.t0[i])), repr(float(self.t1[i])),
                        repr(float(self.censor_time[i])), repr(float(self.true_delta[i]))])
        return buf.getvalue()


def _eta(truth: TrueParams, x: Mapping[str, np.ndarray], z: np.ndarray) -> np.ndarray:
    n = z.size
    out = np.zeros(n)
    for (name, role, parent), b in zip(truth.spec.column_layout(), truth.beta):
        if role == "intercept":
            out += b
        elif role == "covariate":
            out += b * x[parent]
        elif role == "treatment":
            out += b * z
        else:
            out += b * z * x[parent]
    return out


def _simulate(truth: TrueParams, n: int, rng: np.random.Generator) -> SimulatedTrial:
    if n < 2:
        raise DataError("a simulated trial needs n >= 2")
    names = list(truth.spec.main_effects)
    x = {name: truth.covariates[name].draw(rng, n) for name in names}
    n1 = min(max(int(round(truth.allocation * n)), 1), n - 1)
    z = np.zeros(n, dtype=np.int8)
    z[rng.permutation(n)[:n1]] = 1
    eps = get_law(truth.dist).sample(rng, n)
    logt0 = _eta(truth, x, np.zeros(n)) + truth.sigma * eps
    logt1 = _eta(truth, x, np.ones(n)) + truth.sigma * eps
    t0, t1 = np.exp(logt0), np.exp(logt1)
    c = truth.censoring.draw(rng, n)
    t_obs = np.where(z == 1, t1, t0)
    time = np.minimum(t_obs, c)
    event = (t_obs <= c).astype(np.int8)
    xm = np.column_stack([x[name] for name in names]) if names else np.zeros((n, 0))
    data = AnalysisDataset(time, event, z, xm, tuple(names), tuple(str(i + 1) for i in range(n)))
    return SimulatedTrial(data, t0, t1, c, logt1 - logt0)


def simulate_trial(truth: TrueParams, n: int, seed: int) -> SimulatedTrial:
    return _simulate(truth, n, sim_rng(seed, 0))


def censoring_fraction(truth: TrueParams, n: int = 200_000, seed: int = 0) -> float:
    sim = simulate_trial(truth, n, seed)
    return 1.0 - float(sim.data.event.mean())


@dataclass(frozen=True)
class CoverageResult:
    n: int
    n_sims: int
    level: float
    profiles: tuple[Profile, ...]
    true_deltas: tuple[float, ...]
    delta_coverage: tuple[float, ...]
    bootstrap_coverage: tuple[float, ...] | None
    delta_rejection: tuple[float, ...]
    recovery: float  # share of (coefficient, simulation) pairs within 3 SE
    recovery_by_coef: Mapping[str, float]
    sign_recovery: Mapping[str, float]
    n_fit_failures: int
    n_bootstrap_failures: int
    censored_fraction: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n, "n_sims": self.n_sims, "level": self.level,
            "profiles": [dict(p.values) for p in self.profiles],
            "true_deltas": list(self.true_deltas),
            "delta_coverage": list(self.delta_coverage),
            "bootstrap_coverage": None if self.bootstrap_coverage is None else list(self.bootstrap_coverage),
            "delta_rejection": list(self.delta_rejection),
            "recovery": self.recovery,
            "recovery_by_coef": dict(self.recovery_by_coef),
            "sign_recovery": dict(self.sign_recovery),
            "n_fit_failures": self.n_fit_failures,
            "n_bootstrap_failures": self.n_bootstrap_failures,
            "censored_fraction": self.censored_fraction,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["profile", "true_delta", "delta_coverage", "bootstrap_coverage", "delta_rejection"])
        for j, p in enumerate(self.profiles):
            boot = "" if self.bootstrap_coverage is None else f"{self.bootstrap_coverage[j]:.6f}"
            w.writerow([p.label or j, f"{self.true_deltas[j]:.6f}", f"{self.delta_coverage[j]:.6f}", boot,
                        f"{self.delta_rejection[j]:.6f}"])
        return buf.getvalue()


_SIM: dict = {}


def _sim_init(state):
    _SIM.clear()
    _SIM.update(state)


def _one_sim(i: int):
    s = _SIM
    truth: TrueParams = s["truth"]
    sim = _simulate(truth, s["n"], sim_rng(s["seed"], i))
    out = {"i": i, "censored": 1.0 - float(sim.data.event.mean())}
    try:
        f = fit(sim.data, truth.spec, truth.dist, s["fit_options"])
    except AftiteError as exc:
        return {**out, "failed": f"{exc.kind}: {exc}"}
    if not f.converged or f.cov is None:
        return {**out, "failed": "not_converged" if not f.converged else "singular_hessian"}
    beta = np.asarray(truth.beta)
    est = f.params.beta
    se = f.se[: beta.size]
    out["within"] = np.abs(est - beta) <= 3 * se
    out["sign"] = np.sign(est) == np.sign(beta)
    cover, reject = [], []
    for prof, true_d in zip(s["profiles"], s["true_deltas"]):
        r = ite_delta_ci(f, prof, s["level"])
        cover.append(r.ci_lower <= math.exp(true_d) <= r.ci_upper)
        reject.append(not (r.ci_lower <= 1.0 <= r.ci_upper))
    out["delta_cover"] = cover
    out["delta_reject"] = reject
    plan: BootstrapPlan | None = s["plan"]
    if plan is not None:
        sub = replace(plan, seed=int(np.random.SeedSequence(s["seed"], spawn_key=(i, 1)).generate_state(1)[0]),
                      workers=1)
        try:
            res, _ = bootstrap_ite(sim.data, truth.spec, truth.dist, s["profiles"], sub, original=f)
            out["boot_cover"] = [r.ci_lower <= math.exp(d) <= r.ci_upper for r, d in zip(res, s["true_deltas"])]
        except AftiteError as exc:
            out["boot_failed"] = f"{exc.kind}: {exc}"
    return out


def coverage_study(
    truth: TrueParams,
    n: int,
    n_sims: int,
    profiles: Sequence[Profile | Mapping[str, float]],
    plan: BootstrapPlan | None = None,
    seed: int = 1,
    level: float = 0.95,
    workers: int = 1,
    fit_options: FitOptions | None = None,
    max_failure_fraction: float = 0.02,
) -> CoverageResult:
    """Coverage of delta-method (and optionally bootstrap) ITE intervals.

    Simulations whose fit fails are skipped; more than
    ``max_failure_fraction`` of them raises :class:`NumericalError`.
    Bootstrap intervals use ``plan.level``.
    """
    if n_sims < 100:
        raise DataError("a coverage study needs n_sims >= 100")
    profiles = tuple(_as_profile(p) for p in profiles)
    if not profiles:
        raise DataError("no profiles given")
    true_deltas = tuple(truth.true_delta(p) for p in profiles)
    state = dict(truth=truth, n=n, seed=seed, profiles=profiles, true_deltas=true_deltas, level=level,
                 plan=plan, fit_options=fit_options or FitOptions())
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_sim_init, initargs=(state,)) as ex:
            outs = list(ex.map(_one_sim, range(n_sims), chunksize=max(1, n_sims // (4 * workers))))
    else:
        _sim_init(state)
        outs = [_one_sim(i) for i in range(n_sims)]
    outs.sort(key=lambda o: o["i"])

    ok = [o for o in outs if "failed" not in o]
    n_fail = n_sims - len(ok)
    if n_fail > max_failure_fraction * n_sims:
        first = [o["failed"] for o in outs if "failed" in o][:3]
        raise NumericalError(f"{n_fail} of {n_sims} simulated fits failed (tolerance "
                             f"{max_failure_fraction:.0%}); first: {first}")
    if not ok:
        raise NumericalError("every simulated fit failed")
    within = np.array([o["within"] for o in ok])
    signs = np.array([o["sign"] for o in ok])
    names = truth.names
    delta_cov = np.mean([o["delta_cover"] for o in ok], axis=0)
    delta_rej = np.mean([o["delta_reject"] for o in ok], axis=0)
    boot_cov = None
    n_boot_fail = 0
    if plan is not None:
        boots = [o["boot_cover"] for o in ok if "boot_cover" in o]
        n_boot_fail = len(ok) - len(boots)
        if n_boot_fail > max_failure_fraction * n_sims or not boots:
            raise NumericalError(f"bootstrap failed in {n_boot_fail} of {len(ok)} simulations")
        boot_cov = tuple(float(v) for v in np.mean(boots, axis=0))
    return CoverageResult(
        n=n, n_sims=n_sims, level=level, profiles=profiles, true_deltas=true_deltas,
        delta_coverage=tuple(float(v) for v in delta_cov),
        bootstrap_coverage=boot_cov,
        delta_rejection=tuple(float(v) for v in delta_rej),
        recovery=float(within.mean()),
        recovery_by_coef={nm: float(v) for nm, v in zip(names, within.mean(axis=0))},
        sign_recovery={nm: float(v) for nm, v in zip(names, signs.mean(axis=0))},
        n_fit_failures=n_fail,
        n_bootstrap_failures=n_boot_fail,
        censored_fraction=float(np.mean([o["censored"] for o in outs])),
    )
