"""Exact stationary law of the quantile-SGD lattice chain, and checks on it.

States are indexed by the integer ``k`` of ``x_k = x0 + k * eta / q`` where
``x0`` is the lattice point closest to the true quantile. From state ``k``
the chain moves to ``k + p - q`` with probability ``F_k = F(x_k)`` and to
``k + p`` otherwise.

The infinite chain is truncated to a window ``[lo, hi]``. When the sampling
law has bounded support the window is clipped to the accessible states
``[k_- + p - q, k_+ + p]`` (``k_-``/``k_+`` being the extreme states with
``0 < F_k < 1``), so nothing is lost on that side; such sides are called
*closed*. On open sides, jumps that would leave the window are redirected to
the edge state, and the neglected mass is estimated from the solved law.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, special
from scipy.sparse import linalg as splinalg

from .core import RationalQuantile, Trajectory
from .distributions import Distribution
from .inference import asymptotic_variance

__all__ = [
    "ConvergenceError",
    "LatticeChain",
    "StationaryDistribution",
    "DriftReport",
    "build_chain",
    "default_truncation",
    "transition_matrix",
    "stationary_solve",
    "closed_form_median",
    "balance_residual",
    "lyapunov_drift",
    "foster_drift_check",
    "foster_drift_search",
    "mgf_bound_check",
    "tail_bound_check",
    "tail_index",
    "moment_check",
    "normality_check",
    "discrete_ks",
    "cyclic_class_check",
    "pooled_tv",
    "total_variation",
]


class ConvergenceError(ArithmeticError):
    """Power iteration stopped before reaching its tolerance."""


@dataclass(frozen=True)
class LatticeChain:
    quantile: RationalQuantile
    eta: float
    distribution: Distribution
    theta0: float
    anchor: int  # x0 = theta0 + anchor * spacing
    lo: int
    hi: int
    cdf_values: np.ndarray = field(repr=False)
    lo_closed: bool
    hi_closed: bool
    true_quantile: float
    density_at_quantile: float

    @property
    def spacing(self) -> float:
        return self.eta / self.quantile.q

    @property
    def x0(self) -> float:
        return self.theta0 + self.anchor * self.spacing

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    def positions(self, ks) -> np.ndarray:
        return self.theta0 + (self.anchor + np.asarray(ks, dtype=np.int64)) * self.spacing

    def cdf_at(self, ks) -> np.ndarray:
        return np.asarray(self.distribution.cdf(self.positions(ks)), dtype=float)


@dataclass(frozen=True)
class StationaryDistribution:
    offsets: np.ndarray
    pi: np.ndarray
    eta: float
    quantile: RationalQuantile
    x0: float
    lo_closed: bool
    hi_closed: bool
    truncated_mass_bound: float
    iterations: int = 0

    @property
    def q(self) -> int:
        return self.quantile.q

    @property
    def standardized(self) -> np.ndarray:
        """States ``k sqrt(eta) / q``, i.e. ``(x_k - x0) / sqrt(eta)``."""
        return self.offsets * math.sqrt(self.eta) / self.quantile.q

    @property
    def theta(self) -> np.ndarray:
        return self.x0 + self.offsets * (self.eta / self.quantile.q)

    def to_csv(self, buf=None) -> str | None:
        """Write ``k,theta,pi`` rows; returns the text when ``buf`` is None."""
        out = io.StringIO() if buf is None else buf
        out.write("k,theta,pi\n")
        for k, th, p in zip(self.offsets, self.theta, self.pi):
            out.write(f"{int(k)},{th:.12g},{p:.12g}\n")
        return out.getvalue() if buf is None else None


@dataclass(frozen=True)
class DriftReport:
    window: tuple[int, int]
    min_margin: float
    epsilon: float


def default_truncation(quantile: RationalQuantile, eta: float, density: float) -> int:
    """About ten limiting standard deviations, in lattice units."""
    q = quantile.q
    sd_units = math.sqrt(asymptotic_variance(quantile, density) / eta)
    return 10 * q * math.ceil(sd_units) + 10 * q


def build_chain(quantile: RationalQuantile, eta: float, distribution: Distribution,
                k_trunc: int | None = None, theta0: float = 0.0) -> LatticeChain:
    if not eta > 0:
        raise ValueError("eta must be positive")
    p, q = quantile.p, quantile.q
    spacing = eta / q
    target = float(distribution.quantile(quantile.tau))
    dens = float(distribution.pdf(target))
    if not dens > 0:
        raise ValueError("density at the target quantile must be positive")
    if k_trunc is None:
        k_trunc = default_truncation(quantile, eta, dens)
    if k_trunc < q:
        raise ValueError(f"truncation {k_trunc} cannot contain the quantile's jump neighbourhood (< q={q})")
    anchor = int(round((target - theta0) / spacing))

    def cdf(ks):
        return np.asarray(distribution.cdf(theta0 + (anchor + ks) * spacing), dtype=float)

    ks = np.arange(-k_trunc, k_trunc + 1)
    F = cdf(ks)
    lo, hi = -k_trunc, k_trunc
    lo_closed = hi_closed = False
    inside = np.flatnonzero(F > 0)
    if inside.size == 0 or np.all(F >= 1):
        raise ValueError("truncation window does not reach the support of the distribution")
    if F[0] <= 0:
        lo = int(ks[inside[0]]) + p - q
        lo_closed = True
    below_one = np.flatnonzero(F < 1)
    if F[-1] >= 1:
        hi = int(ks[below_one[-1]]) + p
        hi_closed = True
    if not (lo < 0 < hi):
        raise ValueError("truncation window does not contain the quantile")
    window = np.arange(lo, hi + 1)
    return LatticeChain(
        quantile=quantile, eta=eta, distribution=distribution, theta0=theta0,
        anchor=anchor, lo=lo, hi=hi, cdf_values=cdf(window),
        lo_closed=lo_closed, hi_closed=hi_closed,
        true_quantile=target, density_at_quantile=dens,
    )


def transition_matrix(chain: LatticeChain) -> sparse.csr_matrix:
    """Row-stochastic kernel of the truncated chain (edge-redirected)."""
    p, q = chain.quantile.p, chain.quantile.q
    n = chain.size
    rows = np.arange(n)
    F = chain.cdf_values
    down = np.clip(rows + p - q, 0, n - 1)
    up = np.clip(rows + p, 0, n - 1)
    data = np.concatenate([F, 1.0 - F])
    mat = sparse.coo_matrix(
        (data, (np.concatenate([rows, rows]), np.concatenate([down, up]))), shape=(n, n)
    )
    return mat.tocsr()


def _chernoff_tail(dist_x: np.ndarray, pi: np.ndarray, edge: float) -> float:
    # min_t exp(-t*edge) * E exp(t*X) over a grid, for X >= 0 directions.
    mask = pi > 0
    x = dist_x[mask]
    logp = np.log(pi[mask])
    best = 0.0
    for t in np.geomspace(1e-2, 1e3, 400):
        val = special.logsumexp(logp + t * x) - t * edge
        best = min(best, val)
    return math.exp(best)


def _truncation_estimate(chain: LatticeChain, pi: np.ndarray) -> float:
    z = chain.offsets * math.sqrt(chain.eta) / chain.quantile.q
    total = 0.0
    if not chain.hi_closed:
        total += _chernoff_tail(z, pi, z[-1])
    if not chain.lo_closed:
        total += _chernoff_tail(-z, pi, -z[0])
    return min(total, 1.0)


def _wrap(chain: LatticeChain, pi: np.ndarray, iterations: int) -> StationaryDistribution:
    return StationaryDistribution(
        offsets=chain.offsets, pi=pi, eta=chain.eta, quantile=chain.quantile, x0=chain.x0,
        lo_closed=chain.lo_closed, hi_closed=chain.hi_closed,
        truncated_mass_bound=_truncation_estimate(chain, pi), iterations=iterations,
    )


def _direct_guess(P: sparse.csr_matrix) -> np.ndarray:
    n = P.shape[0]
    A = (P.T - sparse.identity(n, format="csr")).tolil()
    A[n - 1, :] = np.ones(n)
    b = np.zeros(n)
    b[n - 1] = 1.0
    x = splinalg.spsolve(A.tocsc(), b)
    x = np.where(np.isfinite(x), np.clip(x, 0.0, None), 0.0)
    s = x.sum()
    return x / s if s > 0 else np.full(n, 1.0 / n)


def stationary_solve(chain: LatticeChain, tol: float = 1e-13, max_iter: int = 2_000_000,
                     warm_start: bool = True, residual_gate: float = 1e-10) -> StationaryDistribution:
    """Stationary vector of the truncated chain by power iteration.

    Iterates the lazy kernel ``(P + I) / 2``, which has the same stationary
    vector as ``P`` but is aperiodic, until successive iterates are within
    ``tol`` in L1. With ``warm_start`` the iteration begins from a sparse
    direct solve of the balance equations, which usually leaves only a few
    polishing sweeps; otherwise it starts from the uniform vector.
    """
    P = transition_matrix(chain)
    n = P.shape[0]
    lazy_t = ((P + sparse.identity(n, format="csr")) * 0.5).T.tocsr()
    pi = _direct_guess(P) if warm_start else np.full(n, 1.0 / n)
    diff = math.inf
    it = 0
    while it < max_iter:
        nxt = lazy_t @ pi
        nxt /= nxt.sum()
        diff = float(np.abs(nxt - pi).sum())
        pi = nxt
        it += 1
        if diff < tol:
            break
    else:
        raise ConvergenceError(
            f"power iteration stalled after {max_iter} sweeps: L1 step {diff:.3e}, "
            f"balance residual {_residual(chain, pi):.3e}"
        )
    res = _residual(chain, pi)
    if res > residual_gate:
        raise ConvergenceError(f"balance residual {res:.3e} exceeds {residual_gate:.1e}")
    return _wrap(chain, pi, it)


def closed_form_median(chain: LatticeChain) -> StationaryDistribution:
    """Birth-death solution for ``tau = 1/2``.

    Detailed balance ``pi_s (1 - F_s) = pi_{s+1} F_{s+1}`` gives
    ``pi_s = pi_0 * prod_{j<s} rho_j`` with ``rho_j = (1 - F_j) / F_{j+1}``
    (reciprocal products for ``s < 0``). Products are accumulated in log
    space and the result normalised over the window.
    """
    if (chain.quantile.p, chain.quantile.q) != (1, 2):
        raise ValueError("closed form exists only for the median")
    F = chain.cdf_values
    if np.any(F[1:] <= 0):
        raise ValueError("state with F = 0 inside the window is unreachable")
    with np.errstate(divide="ignore"):
        log_rho = np.log1p(-F[:-1]) - np.log(F[1:])
    log_pi = np.concatenate([[0.0], np.cumsum(log_rho)])
    log_pi -= log_pi[-chain.lo]  # relative to pi_0
    pi = np.exp(log_pi - special.logsumexp(log_pi))
    return _wrap(chain, pi, 0)


def _residual(chain: LatticeChain, pi: np.ndarray) -> float:
    p, q = chain.quantile.p, chain.quantile.q
    F = chain.cdf_values
    n = pi.shape[0]
    idx = np.arange(n)
    interior = (idx + q - p <= n - 1) & (idx - p >= 0)
    i = idx[interior]
    if i.size == 0:
        return 0.0
    r = pi[i] - pi[i + q - p] * F[i + q - p] - pi[i - p] * (1.0 - F[i - p])
    return float(np.max(np.abs(r)))


def balance_residual(pi: StationaryDistribution | np.ndarray, chain: LatticeChain) -> float:
    """Largest violation of the balance equation over interior states."""
    vec = pi.pi if isinstance(pi, StationaryDistribution) else np.asarray(pi, dtype=float)
    if vec.shape[0] != chain.size:
        raise ValueError("probability vector does not match the chain window")
    return _residual(chain, vec)


def lyapunov_drift(k, F_k, p: int, q: int):
    """Expected change of ``L(k) = |k| + 1`` in one step from state ``k``."""
    k = np.asarray(k)
    return F_k * (np.abs(k + p - q) - np.abs(k)) + (1.0 - F_k) * (np.abs(k + p) - np.abs(k))


def foster_drift_check(chain: LatticeChain, epsilon: float = 0.25,
                       extent: int | None = None) -> DriftReport:
    """Smallest ``[-N, N]`` outside which the ``|k| + 1`` drift is ``<= -epsilon``.

    The drift is evaluated on ``[-extent, extent]`` (default: the chain
    window). Since ``F`` is monotone the drift is monotone beyond ``|k| >= q``,
    so a window found here certifies the whole infinite tail.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    p, q = chain.quantile.p, chain.quantile.q
    if extent is None:
        extent = max(-chain.lo, chain.hi)
    ks = np.arange(-extent, extent + 1)
    drift = lyapunov_drift(ks, chain.cdf_at(ks), p, q)
    bad = np.abs(ks[drift > -epsilon])
    n_exc = int(bad.max()) if bad.size else 0
    if n_exc >= extent - q:
        raise ValueError(
            f"no drift window inside |k| <= {extent}: drift still > -{epsilon} at |k| = {n_exc}"
        )
    outside = np.abs(ks) > n_exc
    return DriftReport(window=(-n_exc, n_exc), min_margin=float(drift[outside].max()), epsilon=epsilon)


def foster_drift_search(chain: LatticeChain, epsilon: float = 0.25,
                        max_extent: int = 10_000_000) -> DriftReport:
    """:func:`foster_drift_check`, doubling the evaluated range until a window is found.

    Heavy tails can push the window far past the truncation used for solving.
    """
    extent = max(-chain.lo, chain.hi, 2 * chain.quantile.q)
    while True:
        try:
            return foster_drift_check(chain, epsilon, extent=extent)
        except ValueError:
            if extent >= max_extent:
                raise
            extent = min(2 * extent, max_extent)


def mgf_bound_check(pi: StationaryDistribution, beta: float, d: int = 2) -> tuple[float, bool]:
    """``S = sum eta^beta pi_k |k|^d exp(|k| sqrt(eta)/q)``; holds iff ``S <= q^2``."""
    if not beta > 3:
        raise ValueError("beta must exceed 3")
    if d not in (0, 1, 2):
        raise ValueError("d must be 0, 1 or 2")
    ak = np.abs(pi.offsets).astype(float)
    log_terms = beta * math.log(pi.eta) + ak * math.sqrt(pi.eta) / pi.q
    with np.errstate(divide="ignore"):
        log_terms = log_terms + np.log(pi.pi) + (d * np.log(ak) if d else 0.0)
    s = float(np.exp(special.logsumexp(log_terms)))
    return s, s <= pi.q ** 2


def tail_index(eta: float, q: int, k0: int) -> int:
    return math.ceil(q * k0 * math.log(1.0 / eta) / math.sqrt(eta))


def tail_bound_check(pi: StationaryDistribution, k0: int, beta: float,
                     d: int = 0) -> tuple[float, bool]:
    """Tail ``sum_{|k| >= N} pi_k |k|^d`` against ``q^2 eta^(k0 - beta)``."""
    if not (isinstance(k0, int) and k0 > beta):
        raise ValueError("k0 must be an integer larger than beta")
    if d not in (0, 1, 2):
        raise ValueError("d must be 0, 1 or 2")
    N = tail_index(pi.eta, pi.q, k0)
    if (N > pi.offsets[-1] and not pi.hi_closed) or (-N < pi.offsets[0] and not pi.lo_closed):
        raise ValueError(f"tail index N={N} lies beyond the truncation window; widen it")
    ak = np.abs(pi.offsets)
    sel = ak >= N
    tail = float(np.sum(pi.pi[sel] * ak[sel].astype(float) ** d))
    return tail, tail <= pi.q ** 2 * pi.eta ** (k0 - beta)


def moment_check(pi: StationaryDistribution) -> tuple[float, float]:
    """First absolute and second moments of the standardized law."""
    z = pi.standardized
    return float(np.sum(pi.pi * np.abs(z))), float(np.sum(pi.pi * z * z))


def discrete_ks(values: np.ndarray, probs: np.ndarray, cdf, cdf_left=None) -> float:
    """Sup distance between a discrete law and ``cdf``.

    ``cdf_left`` gives left limits of the reference CDF; it defaults to
    ``cdf`` itself, which is right for continuous references.
    """
    order = np.argsort(values)
    x = np.asarray(values, dtype=float)[order]
    w = np.asarray(probs, dtype=float)[order]
    after = np.cumsum(w)
    before = after - w
    ref = np.asarray(cdf(x), dtype=float)
    ref_left = ref if cdf_left is None else np.asarray(cdf_left(x), dtype=float)
    return float(max(np.max(np.abs(after - ref)), np.max(np.abs(before - ref_left))))


def normality_check(pi: StationaryDistribution, f_at_quantile: float,
                    quantile: RationalQuantile | None = None) -> float:
    """KS distance from the standardized law to ``N(0, tau(1-tau)/(2f))``."""
    quantile = quantile or pi.quantile
    sd = math.sqrt(asymptotic_variance(quantile, f_at_quantile))
    return discrete_ks(pi.standardized, pi.pi, lambda z: special.ndtr(z / sd))


def total_variation(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(a) - np.asarray(b)).sum())


def _traj_offsets(chain: LatticeChain, trajectory: Trajectory) -> np.ndarray:
    if trajectory.offsets.ndim == 2:
        if trajectory.offsets.shape[1] != 1:
            raise ValueError("trajectory must be one-dimensional")
        offs = trajectory.offsets[:, 0]
    else:
        offs = trajectory.offsets
    if not math.isclose(trajectory.spacing, chain.spacing, rel_tol=1e-12):
        raise ValueError("trajectory and chain use different learning rates")
    shift = (trajectory.start[0] - chain.theta0) / chain.spacing
    if abs(shift - round(shift)) > 1e-6:
        raise ValueError("trajectory does not live on the chain's lattice")
    return offs + int(round(shift)) - chain.anchor


def _empirical(chain: LatticeChain, ks: np.ndarray) -> np.ndarray:
    if ks.size and (ks.min() < chain.lo or ks.max() > chain.hi):
        raise ValueError("trajectory leaves the truncation window")
    counts = np.bincount(ks - chain.lo, minlength=chain.size).astype(float)
    return counts / max(ks.size, 1)


def cyclic_class_check(chain: LatticeChain, pi: StationaryDistribution,
                       trajectory: Trajectory, burn_in: int = 0) -> float:
    """Max over residues ``j`` of the TV distance between the law of the
    iterate at steps ``n = j (mod q)`` and ``q * pi`` on the matching class."""
    q, p = chain.quantile.q, chain.quantile.p
    steps = trajectory.steps
    if steps.size > 1 and np.any(np.diff(steps) != 1):
        raise ValueError("cyclic check needs an unthinned trajectory (stride 1)")
    ks = _traj_offsets(chain, trajectory)
    keep = steps > burn_in
    steps, ks = steps[keep], ks[keep]
    # Offsets measured from theta0 at step n are congruent to n * p (mod q).
    shift = int(round((trajectory.start[0] - chain.theta0) / chain.spacing))
    lattice_from_start = chain.offsets + chain.anchor - shift
    worst = 0.0
    for j in range(q):
        sel = steps % q == j
        emp = _empirical(chain, ks[sel])
        in_class = np.mod(lattice_from_start - j * p, q) == 0
        target = np.where(in_class, q * pi.pi, 0.0)
        worst = max(worst, total_variation(emp, target))
    return worst


def pooled_tv(chain: LatticeChain, pi: StationaryDistribution, thetas) -> float:
    """TV distance between the empirical law of lattice values ``thetas`` and ``pi``."""
    t = np.asarray(thetas, dtype=float)
    ks_f = (t - chain.x0) / chain.spacing
    ks = np.rint(ks_f).astype(np.int64)
    if np.any(np.abs(ks_f - ks) > 1e-6):
        raise ValueError("values are not on the chain's lattice")
    return total_variation(_empirical(chain, ks), pi.pi)
