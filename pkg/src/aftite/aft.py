"""Censored maximum likelihood for accelerated failure time models.

The model is ``log T = X beta + sigma * eps`` with ``eps`` drawn from one of
the error laws in :mod:`aftite.laws`. Parameters are optimized on
``theta = (beta, log sigma)`` by Newton's method with backtracking, using
the analytic gradient and Hessian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from .design import DesignMatrix, ModelSpec, build_design
from .errors import DataError, NumericalError, RankDeficientError
from .ingest import AnalysisDataset
from .laws import ErrorLaw, get_law

__all__ = [
    "ModelParams",
    "FitOptions",
    "FittedModel",
    "loglik",
    "loglik_grad",
    "loglik_hessian",
    "fit",
    "fit_design",
    "information_criteria",
]


@dataclass(frozen=True, eq=False)
class ModelParams:
    beta: np.ndarray
    log_sigma: float

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "log_sigma", float(self.log_sigma))
        if not (np.all(np.isfinite(beta)) and math.isfinite(self.log_sigma)):
            raise NumericalError("model parameters must be finite")

    @property
    def sigma(self) -> float:
        return math.exp(self.log_sigma)

    @property
    def theta(self) -> np.ndarray:
        return np.append(self.beta, self.log_sigma)

    @classmethod
    def from_theta(cls, theta) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:-1], theta[-1])


def _as_matrix(X) -> np.ndarray:
    return X.values if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)


def _terms(theta, X, logt, event, law: ErrorLaw):
    """Per-row log-likelihood and derivatives of it with respect to z."""
    beta, log_sigma = theta[:-1], theta[-1]
    sigma = math.exp(log_sigma)
    with np.errstate(all="ignore"):
        z = (logt - X @ beta) / sigma
        lg, lG = law.logpdf(z), law.logsf(z)
        ll = np.where(event, lg - log_sigma - logt, lG)
    return z, sigma, ll


def _derivs(z, event, law: ErrorLaw):
    with np.errstate(over="ignore", invalid="ignore"):
        a = np.where(event, law.dlogpdf(z), law.dlogsf(z))
        b = np.where(event, law.d2logpdf(z), law.d2logsf(z))
    return a, b


def _check_inputs(X, time, event, weights):
    X = _as_matrix(X)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event).astype(bool)
    if X.ndim != 2 or X.shape[0] != time.shape[0] or event.shape[0] != time.shape[0]:
        raise DataError("design, time and event dimensions disagree")
    if np.any(time <= 0):
        raise DataError("survival times must be > 0")
    w = None if weights is None else np.asarray(weights, dtype=float)
    if w is not None and w.shape != time.shape:
        raise DataError("weights must have one entry per row")
    return X, time, event, w


def _theta_of(params) -> np.ndarray:
    if isinstance(params, ModelParams):
        return params.theta
    return np.asarray(params, dtype=float)


def loglik(params, X, time, event, dist="weibull", weights=None) -> float:
    """Censored log-likelihood.

    Sum over rows of ``event * (log g(z) - log sigma - log t) + (1 - event) * log G(z)``.
    """
    X, time, event, w = _check_inputs(X, time, event, weights)
    theta = _theta_of(params)
    _, _, ll = _terms(theta, X, np.log(time), event, get_law(dist))
    if w is not None:
        ll = np.where(w > 0, w * ll, 0.0)
    bad = np.flatnonzero(~np.isfinite(ll))
    if bad.size:
        raise NumericalError(f"non-finite log-likelihood contribution at row {int(bad[0])}")
    return float(ll.sum())


def _grad(theta, X, logt, event, law, w):
    z, sigma, ll = _terms(theta, X, logt, event, law)
    a, _ = _derivs(z, event, law)
    if w is not None:
        with np.errstate(invalid="ignore"):
            a = w * a
        ev = w * event
    else:
        ev = event
    g = np.empty(theta.shape[0])
    with np.errstate(all="ignore"):
        g[:-1] = -(a @ X) / sigma
        g[-1] = -(a @ z) - ev.sum()
    return g


def _hess(theta, X, logt, event, law, w):
    z, sigma, _ = _terms(theta, X, logt, event, law)
    a, b = _derivs(z, event, law)
    if w is not None:
        with np.errstate(invalid="ignore"):
            a, b = w * a, w * b
    p = X.shape[1]
    H = np.empty((p + 1, p + 1))
    with np.errstate(all="ignore"):
        H[:p, :p] = (X * (b / sigma**2)[:, None]).T @ X
        cross = ((b * z + a) / sigma) @ X
        H[p, p] = np.dot(b, z * z) + np.dot(a, z)
    H[:p, p] = cross
    H[p, :p] = cross
    return H


def loglik_grad(params, X, time, event, dist="weibull", weights=None) -> np.ndarray:
    """Analytic gradient with respect to ``(beta, log sigma)``."""
    X, time, event, w = _check_inputs(X, time, event, weights)
    g = _grad(_theta_of(params), X, np.log(time), event, get_law(dist), w)
    if not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite gradient entries at {np.flatnonzero(~np.isfinite(g)).tolist()}")
    return g


def loglik_hessian(params, X, time, event, dist="weibull", weights=None) -> np.ndarray:
    """Analytic Hessian with respect to ``(beta, log sigma)``."""
    X, time, event, w = _check_inputs(X, time, event, weights)
    H = _hess(_theta_of(params), X, np.log(time), event, get_law(dist), w)
    if not np.all(np.isfinite(H)):
        raise NumericalError("non-finite Hessian")
    return H


def information_criteria(fit_or_loglik, k: int | None = None, n: int | None = None) -> tuple[float, float]:
    """AIC and BIC, from a fitted model or from ``(loglik, k, n)``."""
    if isinstance(fit_or_loglik, FittedModel):
        ll, k, n = fit_or_loglik.loglik, fit_or_loglik.k, fit_or_loglik.n
    else:
        ll = float(fit_or_loglik)
        if k is None or n is None:
            raise TypeError("k and n are required when passing a log-likelihood")
    return -2.0 * ll + 2.0 * k, -2.0 * ll + k * math.log(n)


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 200
    rtol_loglik: float = 1e-9
    gtol: float = 1e-6
    max_halvings: int = 50
    start: Sequence[float] | None = None
    check_rank: bool = True


@dataclass(frozen=True, eq=False)
class FittedModel:
    params: ModelParams
    cov: np.ndarray | None
    loglik: float
    aic: float
    bic: float
    dist: str
    spec: ModelSpec
    n: int
    n_events: int
    converged: bool
    iterations: int
    column_names: tuple[str, ...]
    column_roles: tuple[str, ...]
    column_parents: tuple[str | None, ...]
    history: tuple[float, ...] = ()
    flags: tuple[str, ...] = ()
    covariate_ranges: Mapping[str, Sequence[float]] = field(default_factory=dict)

    @property
    def p(self) -> int:
        return len(self.column_names)

    @property
    def k(self) -> int:
        return self.p + 1

    @property
    def theta(self) -> np.ndarray:
        return self.params.theta

    @property
    def se(self) -> np.ndarray:
        if self.cov is None:
            raise NumericalError("covariance unavailable (singular Hessian at the optimum)")
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise KeyError(f"no column {name!r} in model; columns: {', '.join(self.column_names)}") from None

    def coef_table(self, level: float = 0.95) -> list[dict[str, Any]]:
        """Wald table; ``time_ratio`` and its CI are exp of the coefficient row."""
        q = stats.norm.ppf(0.5 + level / 2)
        se = self.se if self.cov is not None else np.full(self.k, np.nan)
        rows = []
        names = list(self.column_names) + ["log(sigma)"]
        roles = list(self.column_roles) + ["scale"]
        for j, (name, role) in enumerate(zip(names, roles)):
            est = float(self.theta[j])
            s = float(se[j])
            zval = est / s if s > 0 else float("nan")
            rows.append({
                "term": name,
                "role": role,
                "estimate": est,
                "se": s,
                "z": zval,
                "p_value": float(2 * stats.norm.sf(abs(zval))) if math.isfinite(zval) else float("nan"),
                "time_ratio": math.exp(est) if role != "scale" else float("nan"),
                "tr_lower": math.exp(est - q * s) if role != "scale" else float("nan"),
                "tr_upper": math.exp(est + q * s) if role != "scale" else float("nan"),
            })
        return rows

    def linear_predictor(self, X) -> np.ndarray:
        return _as_matrix(X) @ self.params.beta

    def to_dict(self, level: float = 0.95) -> dict[str, Any]:
        return {
            "dist": self.dist,
            "spec": self.spec.to_dict(),
            "n": self.n,
            "n_events": self.n_events,
            "columns": [{"name": n, "role": r, "parent": p}
                        for n, r, p in zip(self.column_names, self.column_roles, self.column_parents)],
            "coefficients": self.coef_table(level),
            "beta": self.params.beta.tolist(),
            "log_sigma": self.params.log_sigma,
            "sigma": self.params.sigma,
            "cov": None if self.cov is None else self.cov.tolist(),
            "criteria": {"loglik": self.loglik, "k": self.k, "aic": self.aic, "bic": self.bic},
            "convergence": {"converged": self.converged, "iterations": self.iterations,
                            "flags": list(self.flags)},
            "covariate_ranges": {k: list(v) for k, v in self.covariate_ranges.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FittedModel":
        cols = d["columns"]
        conv = d.get("convergence", {})
        crit = d["criteria"]
        return cls(
            params=ModelParams(np.asarray(d["beta"]), d["log_sigma"]),
            cov=None if d.get("cov") is None else np.asarray(d["cov"], dtype=float),
            loglik=float(crit["loglik"]),
            aic=float(crit["aic"]),
            bic=float(crit["bic"]),
            dist=d["dist"],
            spec=ModelSpec.from_dict(d["spec"]),
            n=int(d["n"]),
            n_events=int(d["n_events"]),
            converged=bool(conv.get("converged", True)),
            iterations=int(conv.get("iterations", 0)),
            column_names=tuple(c["name"] for c in cols),
            column_roles=tuple(c["role"] for c in cols),
            column_parents=tuple(c["parent"] for c in cols),
            flags=tuple(conv.get("flags", ())),
            covariate_ranges=d.get("covariate_ranges", {}),
        )


def _start(X, logt, event, w, p, opts: FitOptions) -> np.ndarray:
    if opts.start is not None:
        theta = np.asarray(opts.start, dtype=float)
        if theta.shape != (p + 1,):
            raise DataError(f"start vector must have length {p + 1}")
        return theta.copy()
    theta = np.zeros(p + 1)
    mask = event if w is None else event & (w > 0)
    lt = logt[mask]
    if w is None:
        mean = lt.mean()
        sd = lt.std(ddof=1) if lt.size > 1 else 0.0
    else:
        ww = w[mask]
        mean = np.average(lt, weights=ww)
        sd = math.sqrt(np.average((lt - mean) ** 2, weights=ww)) if lt.size > 1 else 0.0
    theta[0] = mean
    theta[-1] = math.log(sd) if sd > 0 and math.isfinite(sd) else 0.0
    return theta


def _safe_ll(theta, X, logt, event, law, w) -> float:
    if not abs(theta[-1]) < 700:
        return -math.inf
    _, _, ll = _terms(theta, X, logt, event, law)
    if w is not None:
        ll = np.where(w > 0, w * ll, 0.0)
    total = ll.sum()
    return float(total) if math.isfinite(total) else -math.inf


def _quasi_newton(theta, X, logt, event, law, w, iters=100):
    def f(th):
        v = _safe_ll(th, X, logt, event, law, w)
        if not math.isfinite(v):
            return math.inf, np.zeros_like(th)
        return -v, -_grad(th, X, logt, event, law, w)

    res = optimize.minimize(f, theta, jac=True, method="BFGS", options={"maxiter": iters})
    return res.x


def _newton(X, logt, event, law, w, theta, opts: FitOptions):
    ll = _safe_ll(theta, X, logt, event, law, w)
    if not math.isfinite(ll):
        raise NumericalError("log-likelihood is not finite at the starting values")
    history = [ll]
    flags: list[str] = []
    converged = False
    it = 0
    prev = None
    for it in range(1, opts.max_iter + 1):
        g = _grad(theta, X, logt, event, law, w)
        if prev is not None and abs(ll - prev) <= opts.rtol_loglik * (1 + abs(ll)) and np.abs(g).max() < opts.gtol:
            converged = True
            it -= 1
            break
        H = _hess(theta, X, logt, event, law, w)
        try:
            L = np.linalg.cholesky(-H)
            direction = np.linalg.solve(L.T, np.linalg.solve(L, g))
        except np.linalg.LinAlgError:
            if "quasi_newton_fallback" not in flags:
                flags.append("quasi_newton_fallback")
            candidate = _quasi_newton(theta, X, logt, event, law, w)
            ll_new = _safe_ll(candidate, X, logt, event, law, w)
            if ll_new >= ll:
                theta = candidate
                prev, ll = ll, ll_new
                history.append(ll)
                continue
            break
        step = 1.0
        accepted = False
        # rounding noise of the summed log-likelihood
        noise = 1e-13 * (1.0 + abs(ll))
        for _ in range(opts.max_halvings):
            candidate = theta + step * direction
            ll_new = _safe_ll(candidate, X, logt, event, law, w)
            if ll_new >= ll - noise:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no ascent available at machine precision
            prev = ll
            g = _grad(theta, X, logt, event, law, w)
            converged = bool(np.abs(g).max() < opts.gtol)
            if not converged:
                flags.append("line_search_failed")
            break
        theta = candidate
        prev, ll = ll, ll_new
        history.append(ll)
    return theta, ll, converged, it, history, flags


def fit_design(
    design: DesignMatrix,
    time,
    event,
    dist: str | ErrorLaw = "weibull",
    spec: ModelSpec | None = None,
    opts: FitOptions | None = None,
    weights=None,
    covariate_ranges: Mapping[str, Sequence[float]] | None = None,
) -> FittedModel:
    """Fit on a prebuilt design. ``weights`` are frequency weights (bootstrap counts)."""
    opts = opts or FitOptions()
    law = get_law(dist)
    X, time, event, w = _check_inputs(design, time, event, weights)
    n_events = int(event.sum() if w is None else np.dot(w, event))
    if n_events == 0:
        raise DataError("no events: the model is not identifiable")
    if opts.check_rank:
        Xa = X if w is None else X[w > 0]
        rank = np.linalg.matrix_rank(Xa)
        if rank < X.shape[1]:
            raise RankDeficientError(f"design matrix has rank {rank} < {X.shape[1]} columns")
    n = len(time) if w is None else int(round(w.sum()))
    if w is not None:
        # rows left out of a bootstrap draw contribute nothing
        keep = w > 0
        X, time, event, w = X[keep], time[keep], event[keep], w[keep]
    logt = np.log(time)
    p = X.shape[1]
    theta0 = _start(X, logt, event, w, p, opts)
    theta, ll, converged, iterations, history, flags = _newton(X, logt, event, law, w, theta0, opts)

    H = _hess(theta, X, logt, event, law, w)
    cov = None
    try:
        info = -H
        L = np.linalg.cholesky(info)
        Linv = np.linalg.solve(L, np.eye(p + 1))
        cov = Linv.T @ Linv
        cov = 0.5 * (cov + cov.T)
        if not np.all(np.isfinite(cov)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        cov = None
        flags.append("singular_hessian")
    k = p + 1
    aic, bic = information_criteria(ll, k, n)
    if spec is None:
        spec = ModelSpec(tuple(name for name, role in design.columns if role == "covariate"),
                         tuple(par for (name, role), par in zip(design.columns, design.parents)
                               if role == "interaction"),
                         any(role == "treatment" for _, role in design.columns))
    return FittedModel(
        params=ModelParams.from_theta(theta),
        cov=cov,
        loglik=ll,
        aic=aic,
        bic=bic,
        dist=law.tag,
        spec=spec,
        n=n,
        n_events=n_events,
        converged=converged,
        iterations=iterations,
        column_names=tuple(design.names),
        column_roles=tuple(design.roles),
        column_parents=tuple(design.parents),
        history=tuple(history),
        flags=tuple(flags),
        covariate_ranges=dict(covariate_ranges or {}),
    )


def fit(
    data: AnalysisDataset,
    spec: ModelSpec,
    dist: str | ErrorLaw = "weibull",
    opts: FitOptions | None = None,
    weights=None,
) -> FittedModel:
    """Maximum-likelihood fit of ``spec`` on ``data``.

    Non-convergence is reported through ``converged=False``, not raised.
    """
    opts = opts or FitOptions()
    design = build_design(data, spec, check_rank=False)
    ranges = {name: [float(data.column(name).min()), float(data.column(name).max())]
              for name in spec.main_effects}
    return fit_design(design, data.time, data.event, dist, spec, opts, weights, ranges)
