"""Recursive (one-pass) kernel density estimation at a point.

After ``n`` samples the estimate is

    f_n(x) = (1 / B_n) * sum_{k<=n} K((x_k - X_k) / b_k),   B_n = sum_{k<=n} b_k,

with bandwidths ``b_k = k ** (-1/5)``. The evaluation point ``x_k`` may be a
fixed ``x`` or, for online inference, the running quantile iterate. Memory
is O(1): only the numerator and ``B_n`` are stored.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace

from scipy import integrate

from . import _kernels

__all__ = ["Kernel", "KdeState", "kernel_eval", "bandwidth", "kde_update", "kde_estimate"]

_KERNEL_IDS = {"rectangle": _kernels.RECTANGLE, "epanechnikov": _kernels.EPANECHNIKOV}
_SUPPORT = {"rectangle": 0.5, "epanechnikov": 1.0}


@dataclass(frozen=True)
class Kernel:
    """A bounded-support, unit-mass smoothing kernel.

    ``kappa`` is the integral of K^2 and ``c_k`` the constant
    ``sup|K| + int u^2 |K(u)| du``; both are computed by quadrature when the
    kernel is built through :meth:`from_name`.
    """

    name: str
    support_radius: float
    kappa: float
    mass: float
    c_k: float

    @property
    def kernel_id(self) -> int:
        return _KERNEL_IDS[self.name]

    def __call__(self, v: float) -> float:
        return kernel_eval(self, v)

    @classmethod
    def from_name(cls, name: str) -> Kernel:
        return _build_kernel(name.lower())


@functools.cache
def _build_kernel(name: str) -> Kernel:
    if name not in _KERNEL_IDS:
        raise ValueError(f"unknown kernel {name!r}; expected one of {sorted(_KERNEL_IDS)}")
    kid = _KERNEL_IDS[name]
    m = _SUPPORT[name]

    def k(u):
        return _kernels.kernel_value(kid, u)

    opts = dict(epsabs=1e-13, epsrel=1e-13)
    mass = integrate.quad(k, -m, m, **opts)[0]
    kappa = integrate.quad(lambda u: k(u) ** 2, -m, m, **opts)[0]
    second = integrate.quad(lambda u: u * u * abs(k(u)), -m, m, **opts)[0]
    # Both kernels peak at the origin.
    c_k = abs(k(0.0)) + second
    if abs(mass - 1.0) > 1e-9:
        raise ValueError(f"kernel {name} has mass {mass}, expected 1")
    if not math.isfinite(c_k):
        raise ValueError(f"kernel {name} violates the moment condition")
    return Kernel(name=name, support_radius=m, kappa=kappa, mass=mass, c_k=c_k)


def kernel_eval(kernel: Kernel, v: float) -> float:
    """Rectangle: ``1{|v| < 1/2}``. Epanechnikov: ``0.75 (1 - v^2) 1{|v| <= 1}``."""
    if not math.isfinite(v):
        raise ValueError("kernel argument must be finite")
    return _kernels.kernel_value(kernel.kernel_id, float(v))


def bandwidth(k: int) -> float:
    if k < 1:
        raise ValueError("bandwidth index starts at 1")
    return float(k) ** -0.2


@dataclass(frozen=True)
class KdeState:
    kernel: Kernel
    numerator: float = 0.0
    bandwidth_sum: float = 0.0
    n: int = 0

    @property
    def estimate(self) -> float:
        return kde_estimate(self)


def kde_update(state: KdeState, x_eval: float, sample: float) -> KdeState:
    if not (math.isfinite(x_eval) and math.isfinite(sample)):
        raise ValueError("KDE inputs must be finite")
    n = state.n + 1
    b = bandwidth(n)
    return replace(
        state,
        numerator=state.numerator + kernel_eval(state.kernel, (x_eval - sample) / b),
        bandwidth_sum=state.bandwidth_sum + b,
        n=n,
    )


def kde_estimate(state: KdeState) -> float:
    if state.n == 0:
        raise ValueError("no samples seen yet")
    return state.numerator / state.bandwidth_sum
