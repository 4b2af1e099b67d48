"""Asymptotic variance and confidence intervals for the last SGD iterate.

Under stationarity ``(theta_n - x0) / sqrt(eta)`` is approximately
``N(0, tau (1 - tau) / (2 f))`` where ``f`` is the density at the target
quantile, so a level ``1 - alpha`` interval is

    theta_n +/- z_{1 - alpha/2} * sqrt(eta * tau (1 - tau) / (2 f_hat)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _kernels
from .core import RationalQuantile, SgdConfig, SgdState, initial_state
from .density import Kernel, KdeState

__all__ = [
    "DENSITY_FLOOR",
    "ConfidenceInterval",
    "asymptotic_variance",
    "confidence_interval",
    "z_quantile",
    "StreamingEstimator",
]

# Below this a plug-in density gives an effectively unbounded interval.
DENSITY_FLOOR = 1e-8


@dataclass(frozen=True)
class ConfidenceInterval:
    center: float
    half_width: float
    level: float
    eta: float
    f_hat: float

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def z_quantile(prob: float) -> float:
    """Standard normal inverse CDF."""
    if not (0.0 < prob < 1.0):
        raise ValueError(f"probability must lie in (0, 1), got {prob!r}")
    return float(special.ndtri(prob))


def asymptotic_variance(quantile: RationalQuantile, f_hat: float) -> float:
    """Variance ``tau (1 - tau) / (2 f)`` of the sqrt(eta)-standardized limit."""
    if not (f_hat > 0 and math.isfinite(f_hat)):
        raise ValueError(f"density must be positive and finite, got {f_hat!r}")
    tau = quantile.tau
    return tau * (1.0 - tau) / (2.0 * f_hat)


def confidence_interval(theta_n: float, eta: float, quantile: RationalQuantile,
                        f_hat: float, alpha: float) -> ConfidenceInterval:
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if not (eta > 0 and math.isfinite(eta)):
        raise ValueError(f"eta must be positive, got {eta!r}")
    if not (f_hat >= DENSITY_FLOOR and math.isfinite(f_hat)):
        raise ValueError(f"density estimate {f_hat!r} is below the floor {DENSITY_FLOOR}")
    if not math.isfinite(theta_n):
        raise ValueError("theta_n must be finite")
    z = z_quantile(1.0 - alpha / 2.0)
    half = z * math.sqrt(eta * asymptotic_variance(quantile, f_hat))
    return ConfidenceInterval(center=theta_n, half_width=half, level=1.0 - alpha, eta=eta, f_hat=f_hat)


class StreamingEstimator:
    """Scalar quantile SGD with a concurrent recursive density estimate.

    Each incoming sample first feeds the density estimate, evaluated at the
    iterate held before the update (or at ``x_eval`` if given), and then
    moves the iterate. Samples can be pushed one at a time or in chunks.
    """

    def __init__(self, config: SgdConfig, kernel: Kernel | str = "epanechnikov",
                 x_eval: float | None = None):
        if config.dim != 1:
            raise ValueError("StreamingEstimator handles one coordinate")
        self.config = config
        self.kernel = Kernel.from_name(kernel) if isinstance(kernel, str) else kernel
        self.x_eval = x_eval
        self._sgd = initial_state(config)
        self._num = 0.0
        self._bsum = 0.0

    @property
    def n(self) -> int:
        return self._sgd.n

    @property
    def sgd_state(self) -> SgdState:
        return self._sgd

    @property
    def kde_state(self) -> KdeState:
        return KdeState(kernel=self.kernel, numerator=self._num, bandwidth_sum=self._bsum, n=self.n)

    @property
    def theta(self) -> float:
        return float(self._sgd.theta[0])

    @property
    def f_hat(self) -> float:
        return self.kde_state.estimate

    def update(self, samples) -> StreamingEstimator:
        x = np.ascontiguousarray(np.atleast_1d(np.asarray(samples, dtype=np.float64)))
        if x.ndim != 1:
            raise ValueError("expected a flat array of scalar samples")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples contain non-finite values")
        if x.size == 0:
            return self
        cfg = self.config
        empty_i = np.empty(0, dtype=np.int64)
        empty_f = np.empty(0)
        k, num, bsum = _kernels.sgd_kde_path(
            x, self._sgd.start[0], cfg.spacing, cfg.quantile.p, cfg.quantile.q,
            self._sgd.offsets[0], self.n, self._num, self._bsum, self.kernel.kernel_id,
            self.x_eval is not None, 0.0 if self.x_eval is None else float(self.x_eval),
            empty_i, empty_i.copy(), empty_f,
        )
        self._sgd = SgdState(config=cfg, start=self._sgd.start, offsets=(int(k),), n=self.n + x.size)
        self._num = float(num)
        self._bsum = float(bsum)
        return self

    def interval(self, alpha: float = 0.05) -> ConfidenceInterval:
        return confidence_interval(self.theta, self.config.eta, self.config.quantile, self.f_hat, alpha)
