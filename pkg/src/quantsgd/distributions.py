"""Sampling distributions with exact CDF, PDF and quantile functions.

Only the four families the experiments need are provided: uniform, normal,
Cauchy (location-scale) and beta. CDFs and PDFs accept scalars or numpy
arrays. Sampling takes a ``numpy.random.Generator``; see :func:`make_rng` for
the reproducible stream layout used by the experiment harness.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy import optimize, special

__all__ = [
    "Distribution",
    "Uniform",
    "Normal",
    "Cauchy",
    "Beta",
    "betainc_regularized",
    "make_rng",
    "parse_distribution",
]

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAXITER = 500


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return a Philox4x64 generator keyed by ``(seed, stream)``.

    Philox is counter based: each (seed, stream) key selects an independent
    sequence, so replication ``r`` of an experiment seeded with ``seed`` draws
    from ``make_rng(seed, r)`` no matter which worker runs it.
    """
    if seed < 0 or seed >= 2**64 or stream < 0 or stream >= 2**64:
        raise ValueError("seed and stream must be unsigned 64-bit integers")
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@nb.njit(cache=True)
def _betacf(a, b, x):
    # Modified Lentz evaluation of the incomplete beta continued fraction.
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAXITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    return np.nan


@nb.njit(cache=True)
def _betainc_scalar(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    # The fraction converges quickly only below the mean-ish split point.
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


@nb.njit(cache=True)
def _betainc_array(a, b, xs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = _betainc_scalar(a, b, xs[i])
    return out


def betainc_regularized(a: float, b: float, x):
    """Regularized incomplete beta function I_x(a, b).

    Evaluated with the continued fraction on whichever side of
    I_x(a,b) = 1 - I_{1-x}(b,a) converges fastest. Accepts a scalar or an
    array for ``x``; values outside [0, 1] are clamped.
    """
    if a <= 0 or b <= 0:
        raise ValueError("beta parameters must be positive")
    if np.isscalar(x):
        val = _betainc_scalar(float(a), float(b), float(x))
        if math.isnan(val):
            raise ArithmeticError("incomplete beta continued fraction did not converge")
        return val
    xs = np.asarray(x, dtype=np.float64)
    out = _betainc_array(float(a), float(b), np.ascontiguousarray(xs.ravel()))
    if np.isnan(out).any():
        raise ArithmeticError("incomplete beta continued fraction did not converge")
    return out.reshape(xs.shape)


class Distribution(ABC):
    """A univariate law with analytic CDF/PDF and a sampler."""

    @abstractmethod
    def cdf(self, x): ...

    @abstractmethod
    def pdf(self, x): ...

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: int | None = None): ...

    @property
    @abstractmethod
    def support(self) -> tuple[float, float]: ...

    def quantile(self, prob: float) -> float:
        _check_prob(prob)
        lo, hi = self.support
        # Expand a bracket for unbounded supports.
        lo = -1.0 if math.isinf(lo) else lo
        hi = 1.0 if math.isinf(hi) else hi
        while self.cdf(lo) > prob:
            lo = 2.0 * lo if lo < 0 else lo - 1.0
        while self.cdf(hi) < prob:
            hi = 2.0 * hi if hi > 0 else hi + 1.0
        return optimize.brentq(lambda t: self.cdf(t) - prob, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)

    def __str__(self) -> str:
        return self.spec_string()

    @abstractmethod
    def spec_string(self) -> str: ...


def _check_prob(prob: float) -> None:
    if not (0.0 < prob < 1.0):
        raise ValueError(f"probability must lie in (0, 1), got {prob!r}")


@dataclass(frozen=True)
class Uniform(Distribution):
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or self.b <= self.a:
            raise ValueError("uniform requires finite a < b")

    @property
    def support(self):
        return (self.a, self.b)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)[()]

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)[()]

    def quantile(self, prob):
        _check_prob(prob)
        return self.a + (self.b - self.a) * prob

    def sample(self, rng, size=None):
        return self.a + (self.b - self.a) * rng.random(size)

    def spec_string(self):
        return f"uniform:{self.a:g},{self.b:g}"


@dataclass(frozen=True)
class Normal(Distribution):
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("normal requires sigma > 0")

    @property
    def support(self):
        return (-math.inf, math.inf)

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)[()]

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return (np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2.0 * math.pi)))[()]

    def quantile(self, prob):
        _check_prob(prob)
        return self.mu + self.sigma * float(special.ndtri(prob))

    def sample(self, rng, size=None):
        return self.mu + self.sigma * rng.standard_normal(size)

    def spec_string(self):
        return f"normal:{self.mu:g},{self.sigma:g}"


@dataclass(frozen=True)
class Cauchy(Distribution):
    loc: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("cauchy requires scale > 0")

    @property
    def support(self):
        return (-math.inf, math.inf)

    def cdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return (0.5 + np.arctan(z) / math.pi)[()]

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return (1.0 / (math.pi * self.scale * (1.0 + z * z)))[()]

    def quantile(self, prob):
        _check_prob(prob)
        return self.loc + self.scale * math.tan(math.pi * (prob - 0.5))

    def sample(self, rng, size=None):
        return self.loc + self.scale * np.tan(math.pi * (rng.random(size) - 0.5))

    def spec_string(self):
        return f"cauchy:{self.loc:g},{self.scale:g}"


@dataclass(frozen=True)
class Beta(Distribution):
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("beta requires a, b > 0")

    @property
    def support(self):
        return (0.0, 1.0)

    def cdf(self, x):
        return betainc_regularized(self.a, self.b, x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x > 0) & (x < 1)
        xc = np.where(inside, x, 0.5)
        log_norm = math.lgamma(self.a + self.b) - math.lgamma(self.a) - math.lgamma(self.b)
        dens = np.exp(log_norm + (self.a - 1) * np.log(xc) + (self.b - 1) * np.log1p(-xc))
        return np.where(inside, dens, 0.0)[()]

    def sample(self, rng, size=None):
        # numpy's standard_gamma is the Marsaglia-Tsang rejection sampler.
        g1 = rng.standard_gamma(self.a, size)
        g2 = rng.standard_gamma(self.b, size)
        return g1 / (g1 + g2)

    def spec_string(self):
        return f"beta:{self.a:g},{self.b:g}"


_FAMILIES = {
    "uniform": (Uniform, 2),
    "normal": (Normal, 2),
    "cauchy": (Cauchy, 2),
    "beta": (Beta, 2),
}


def parse_distribution(text: str) -> Distribution:
    """Parse ``family:param1,param2`` (e.g. ``beta:2,3`` or ``cauchy:0,2``)."""
    name, _, params = text.strip().partition(":")
    name = name.lower()
    if name not in _FAMILIES:
        raise ValueError(f"unknown distribution {name!r}; expected one of {sorted(_FAMILIES)}")
    cls, arity = _FAMILIES[name]
    try:
        values = [float(v) for v in params.split(",")] if params else []
    except ValueError as exc:
        raise ValueError(f"bad parameters in {text!r}") from exc
    if len(values) != arity:
        raise ValueError(f"{name} takes {arity} parameters, got {len(values)}")
    return cls(*values)
