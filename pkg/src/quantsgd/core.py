"""Constant learning-rate SGD for the quantile (pinball) loss.

For a level ``tau = p/q`` the update

    theta <- theta + eta * tau          if sample > theta
    theta <- theta - eta * (1 - tau)    otherwise

moves on the lattice ``start + k * eta / q``. States here keep the integer
offset ``k`` and the start point separately, so the lattice membership of an
iterate is exact no matter how many steps are taken.
"""

from __future__ import annotations

import math
from collections.abc import Iterable
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import _kernels
from .distributions import make_rng

__all__ = [
    "RationalQuantile",
    "SgdConfig",
    "SgdState",
    "Trajectory",
    "sgd_step",
    "randomized_init",
    "run_stream",
    "initial_state",
]

DEFAULT_MAX_RECORDS = 50_000_000


@dataclass(frozen=True)
class RationalQuantile:
    """Quantile level ``p/q`` in lowest terms with ``0 < p < q``."""

    p: int
    q: int

    def __post_init__(self):
        if not (isinstance(self.p, int) and isinstance(self.q, int)):
            raise TypeError("p and q must be integers")
        if not (0 < self.p < self.q):
            raise ValueError(f"need 0 < p < q, got p={self.p}, q={self.q}")
        if math.gcd(self.p, self.q) != 1:
            raise ValueError(f"p={self.p} and q={self.q} are not coprime")

    @property
    def tau(self) -> float:
        return self.p / self.q

    @classmethod
    def parse(cls, text: str | Fraction) -> RationalQuantile:
        """Accept ``"3/4"``, ``"0.75"`` or a ``Fraction``.

        Decimal strings are read exactly, so ``"0.3"`` becomes ``3/10``.
        Unreduced fractions such as ``"2/4"`` are rejected rather than
        silently reduced.
        """
        if isinstance(text, Fraction):
            return cls(text.numerator, text.denominator)
        text = text.strip()
        if "/" in text:
            num, _, den = text.partition("/")
            return cls(int(num), int(den))
        frac = Fraction(text)
        return cls(frac.numerator, frac.denominator)

    def __str__(self) -> str:
        return f"{self.p}/{self.q}"


@dataclass(frozen=True)
class SgdConfig:
    quantile: RationalQuantile
    eta: float
    theta0: tuple[float, ...] = (0.0,)
    randomized_init: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ValueError("eta must be a positive finite number")
        theta0 = self.theta0
        if np.isscalar(theta0):
            theta0 = (float(theta0),)
        theta0 = tuple(float(t) for t in theta0)
        if len(theta0) < 1:
            raise ValueError("theta0 needs at least one coordinate")
        if not all(math.isfinite(t) for t in theta0):
            raise ValueError("theta0 must be finite")
        object.__setattr__(self, "theta0", theta0)
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def dim(self) -> int:
        return len(self.theta0)

    @property
    def spacing(self) -> float:
        """Lattice spacing ``eta / q``."""
        return self.eta / self.quantile.q


@dataclass(frozen=True)
class SgdState:
    """Position of ``d`` independent quantile chains after ``n`` steps.

    ``start`` is the (possibly randomized) initial point and ``offsets`` the
    integer lattice displacement of each coordinate from it.
    """

    config: SgdConfig
    start: tuple[float, ...]
    offsets: tuple[int, ...]
    n: int = 0

    @property
    def theta(self) -> np.ndarray:
        k = np.asarray(self.offsets, dtype=np.int64)
        return np.asarray(self.start) + k * self.config.spacing


@dataclass(frozen=True)
class Trajectory:
    """Thinned record of iterates: ``theta[i]`` is the state after ``steps[i]`` steps."""

    steps: np.ndarray
    offsets: np.ndarray = field(repr=False)
    start: tuple[float, ...]
    spacing: float

    @property
    def theta(self) -> np.ndarray:
        return np.asarray(self.start) + self.offsets * self.spacing


def randomized_init(theta0: float, quantile: RationalQuantile, eta: float,
                    rng: np.random.Generator) -> float:
    """Shift ``theta0`` by a uniformly chosen multiple ``j * eta / q``, ``j < q``.

    Drawing the start uniformly over one lattice period mixes the ``q``
    cyclic classes, so the chain's marginal law converges instead of cycling.
    """
    j = int(rng.integers(quantile.q))
    return theta0 + j * (eta / quantile.q)


def initial_state(config: SgdConfig) -> SgdState:
    if config.randomized_init:
        rng = make_rng(config.seed)
        start = tuple(randomized_init(t, config.quantile, config.eta, rng) for t in config.theta0)
    else:
        start = config.theta0
    return SgdState(config=config, start=start, offsets=(0,) * config.dim, n=0)


def _as_sample_vector(state: SgdState, sample) -> np.ndarray:
    x = np.atleast_1d(np.asarray(sample, dtype=np.float64))
    if x.ndim != 1 or x.shape[0] != state.config.dim:
        raise ValueError(f"sample has shape {x.shape}, expected ({state.config.dim},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample contains non-finite values")
    return x


def sgd_step(state: SgdState, sample) -> SgdState:
    """One SGD update of every coordinate against one sample vector."""
    x = _as_sample_vector(state, sample)
    cfg = state.config
    p, q = cfg.quantile.p, cfg.quantile.q
    spacing = cfg.spacing
    new = []
    for s, k, xi in zip(state.start, state.offsets, x):
        # Same expression as the compiled kernels, so both paths agree exactly.
        new.append(k + p if xi > s + k * spacing else k - (q - p))
    return replace(state, offsets=tuple(new), n=state.n + 1)


def _as_sample_matrix(samples, dim: int) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        arr = samples
    elif isinstance(samples, Iterable):
        arr = np.asarray(list(samples), dtype=np.float64)
    else:
        raise TypeError("samples must be an array or an iterable of samples")
    arr = np.asarray(arr, dtype=np.float64)
    if arr.size == 0:
        return np.empty((0, dim))
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim == 1 else arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"samples have shape {arr.shape}, expected (n, {dim})")
    if not np.all(np.isfinite(arr)):
        raise ValueError("samples contain non-finite values")
    return arr


def run_stream(config: SgdConfig, samples, *, record: bool = False, stride: int = 1,
               max_records: int = DEFAULT_MAX_RECORDS,
               state: SgdState | None = None) -> tuple[SgdState, Trajectory | None]:
    """Fold :func:`sgd_step` over ``samples``.

    ``samples`` is an ``(n, d)`` array (a flat array is fine when ``d == 1``)
    or a finite iterable of sample vectors. With ``record=True`` the iterate
    after every ``stride``-th step is kept; recording more than
    ``max_records`` points raises ``MemoryError`` up front. Pass ``state`` to
    continue an earlier run.
    """
    if state is None:
        state = initial_state(config)
    elif state.config != config:
        raise ValueError("state was produced under a different config")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    arr = _as_sample_matrix(samples, config.dim)
    n_new = arr.shape[0]
    n_rec = n_new // stride if record else 0
    if record and n_rec * config.dim > max_records:
        raise MemoryError(
            f"trajectory would hold {n_rec * config.dim} points (> {max_records}); raise stride"
        )

    p, q = config.quantile.p, config.quantile.q
    offsets = []
    rec = np.empty((n_rec, config.dim), dtype=np.int64)
    for i in range(config.dim):
        col = np.ascontiguousarray(arr[:, i])
        buf = np.empty(n_rec, dtype=np.int64)
        k = _kernels.walk(col, state.start[i], config.spacing, p, q, state.offsets[i],
                          stride if record else 0, buf)
        offsets.append(int(k))
        rec[:, i] = buf
    final = replace(state, offsets=tuple(offsets), n=state.n + n_new)

    traj = None
    if record:
        steps = state.n + stride * np.arange(1, n_rec + 1, dtype=np.int64)
        traj = Trajectory(steps=steps, offsets=rec, start=state.start, spacing=config.spacing)
    return final, traj
