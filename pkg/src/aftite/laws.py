"""Standardized error laws for log-time AFT models.

Each law is described on the residual scale ``z = (log t - eta) / sigma``
through its log-density, log-survival and their first two derivatives, which
is everything the censored likelihood and its analytic Hessian need.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .errors import DataError

__all__ = ["ErrorLaw", "Weibull", "LogNormal", "LogLogistic", "get_law", "LAW_TAGS"]

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class ErrorLaw:
    tag = ""
    #: mean of the standardized error, used by simulation checks
    mean = 0.0

    def logpdf(self, z):
        raise NotImplementedError

    def logsf(self, z):
        raise NotImplementedError

    def dlogpdf(self, z):
        raise NotImplementedError

    def d2logpdf(self, z):
        raise NotImplementedError

    def dlogsf(self, z):
        raise NotImplementedError

    def d2logsf(self, z):
        raise NotImplementedError

    def isf(self, s):
        """Inverse survival: the z with G(z) = s."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.isf(rng.uniform(size=size))

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def sf(self, z):
        return np.exp(self.logsf(z))

    def __repr__(self):
        return f"{type(self).__name__}()"


class Weibull(ErrorLaw):
    """Minimum extreme-value errors: ``G(z) = exp(-e^z)``."""

    tag = "weibull"
    mean = -np.euler_gamma

    def logpdf(self, z):
        return z - np.exp(z)

    def logsf(self, z):
        return -np.exp(z)

    def dlogpdf(self, z):
        return 1.0 - np.exp(z)

    def d2logpdf(self, z):
        return -np.exp(z)

    def dlogsf(self, z):
        return -np.exp(z)

    def d2logsf(self, z):
        return -np.exp(z)

    def isf(self, s):
        return np.log(-np.log(s))


class LogNormal(ErrorLaw):
    tag = "lognormal"

    def logpdf(self, z):
        return -0.5 * np.square(z) - _LOG_SQRT_2PI

    def logsf(self, z):
        return special.log_ndtr(-np.asarray(z, dtype=float))

    def _mills(self, z):
        return np.exp(self.logpdf(z) - self.logsf(z))

    def dlogpdf(self, z):
        return -np.asarray(z, dtype=float)

    def d2logpdf(self, z):
        return -np.ones_like(np.asarray(z, dtype=float))

    def dlogsf(self, z):
        return -self._mills(z)

    def d2logsf(self, z):
        lam = self._mills(z)
        return -lam * (lam - z)

    def isf(self, s):
        return -special.ndtri(s)


class LogLogistic(ErrorLaw):
    """Logistic errors: ``G(z) = 1 / (1 + e^z)``."""

    tag = "loglogistic"

    def logpdf(self, z):
        return z - 2.0 * np.logaddexp(0.0, z)

    def logsf(self, z):
        return -np.logaddexp(0.0, z)

    def dlogpdf(self, z):
        return 1.0 - 2.0 * special.expit(z)

    def d2logpdf(self, z):
        p = special.expit(z)
        return -2.0 * p * (1.0 - p)

    def dlogsf(self, z):
        return -special.expit(z)

    def d2logsf(self, z):
        p = special.expit(z)
        return -p * (1.0 - p)

    def isf(self, s):
        s = np.asarray(s, dtype=float)
        return np.log1p(-s) - np.log(s)


_LAWS = {law.tag: law for law in (Weibull(), LogNormal(), LogLogistic())}
LAW_TAGS = tuple(_LAWS)


def get_law(dist: str | ErrorLaw) -> ErrorLaw:
    if isinstance(dist, ErrorLaw):
        return dist
    try:
        return _LAWS[dist]
    except KeyError:
        raise DataError(f"unknown distribution {dist!r}; expected one of {', '.join(LAW_TAGS)}") from None
