"""Monte Carlo harness: coverage tables, MSE curves and normality diagnostics.

Every replication ``r`` draws its whole sample stream from
``make_rng(seed, r)`` and reuses it for every learning rate in the grid, and
every step count in ``n_grid`` is a checkpoint of the same run. Results are
collected per replication index before aggregation, so the output does not
depend on how many worker threads were used.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special, stats

from . import _kernels
from .core import RationalQuantile
from .density import Kernel
from .distributions import Distribution, make_rng
from .inference import DENSITY_FLOOR, asymptotic_variance, z_quantile

__all__ = [
    "ExperimentConfig",
    "SimulationResult",
    "CoverageCell",
    "CoverageReport",
    "MseReport",
    "NormalityCell",
    "NormalityReport",
    "simulate",
    "coverage_experiment",
    "coverage_from",
    "mse_curve",
    "normality_experiment",
    "write_report",
]

KDE_POINTS = ("iterate", "true")
FORMATS = ("csv", "json")


def _g(x: float) -> str:
    return f"{x:.6g}"


def _r6(x: float) -> float | None:
    return None if not math.isfinite(x) else float(_g(x))


@dataclass(frozen=True)
class ExperimentConfig:
    distribution: Distribution
    quantile: RationalQuantile
    eta_grid: tuple[float, ...]
    n_grid: tuple[int, ...]
    replications: int = 500
    alpha: float = 0.05
    seed: int = 42
    burn_in: int = 0
    output_path: str | None = None
    format: str = "csv"
    theta0: float = 0.0
    kernel: str = "epanechnikov"
    kde_point: str = "iterate"
    randomized_init: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "eta_grid", tuple(float(e) for e in self.eta_grid))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if not self.eta_grid or not self.n_grid:
            raise ValueError("eta and n grids must be non-empty")
        if any(not (e > 0 and math.isfinite(e)) for e in self.eta_grid):
            raise ValueError("learning rates must be positive")
        if any(n < 0 for n in self.n_grid):
            raise ValueError("step counts must be non-negative")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if not (0 < self.alpha < 1):
            raise ValueError("alpha must lie in (0, 1)")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.format not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")
        if self.kde_point not in KDE_POINTS:
            raise ValueError(f"kde_point must be one of {KDE_POINTS}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        Kernel.from_name(self.kernel)

    def describe(self) -> dict:
        return {
            "distribution": self.distribution.spec_string(),
            "tau": str(self.quantile),
            "eta_grid": [_r6(e) for e in self.eta_grid],
            "n_grid": list(self.n_grid),
            "replications": self.replications,
            "alpha": self.alpha,
            "seed": self.seed,
            "burn_in": self.burn_in,
            "theta0": self.theta0,
            "kernel": self.kernel,
            "kde_point": self.kde_point,
            "randomized_init": self.randomized_init,
        }


@dataclass(frozen=True)
class SimulationResult:
    """Iterates and density estimates, indexed ``[replication, eta, n]``."""

    config: ExperimentConfig
    true_quantile: float
    true_density: float
    theta: np.ndarray = field(repr=False)
    f_hat: np.ndarray = field(repr=False)


def _replicate(config: ExperimentConfig, r: int, target: float,
               checkpoints: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rng = make_rng(config.seed, r)
    n_max = int(checkpoints[-1])
    draws = np.ascontiguousarray(
        np.asarray(config.distribution.sample(rng, config.burn_in + n_max), dtype=np.float64)
    )
    p, q = config.quantile.p, config.quantile.q
    shift = int(rng.integers(q)) if config.randomized_init else 0
    kid = Kernel.from_name(config.kernel).kernel_id
    fixed = config.kde_point == "true"
    warm, main = draws[: config.burn_in], draws[config.burn_in:]
    n_eta, n_ck = len(config.eta_grid), checkpoints.shape[0]
    theta = np.empty((n_eta, n_ck))
    fh = np.empty((n_eta, n_ck))
    ck_k = np.empty(n_ck, dtype=np.int64)
    for i, eta in enumerate(config.eta_grid):
        spacing = eta / q
        start = config.theta0 + shift * spacing
        k = _kernels.walk(warm, start, spacing, p, q, 0, 0, np.empty(0, dtype=np.int64))
        _kernels.sgd_kde_path(main, start, spacing, p, q, k, 0, 0.0, 0.0, kid, fixed, target,
                              checkpoints, ck_k, fh[i])
        theta[i] = start + ck_k * spacing
    return theta, fh


def simulate(config: ExperimentConfig) -> SimulationResult:
    target = float(config.distribution.quantile(config.quantile.tau))
    dens = float(config.distribution.pdf(target))
    checkpoints = np.array(sorted(set(config.n_grid)), dtype=np.int64)

    def job(r):
        return _replicate(config, r, target, checkpoints)

    reps = range(config.replications)
    if config.workers == 1:
        results = [job(r) for r in reps]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(job, reps))
    theta = np.stack([t for t, _ in results])
    f_hat = np.stack([f for _, f in results])
    # Reorder checkpoint columns to follow n_grid as given.
    col = np.searchsorted(checkpoints, np.array(config.n_grid))
    return SimulationResult(config=config, true_quantile=target, true_density=dens,
                            theta=theta[:, :, col], f_hat=f_hat[:, :, col])


@dataclass(frozen=True)
class CoverageCell:
    eta: float
    n: int
    coverage: float
    half_width: float
    mse: float
    ks: float
    failed: int


@dataclass(frozen=True)
class CoverageReport:
    config: ExperimentConfig
    true_quantile: float
    cells: list[CoverageCell]

    def cell(self, eta: float, n: int) -> CoverageCell:
        for c in self.cells:
            if math.isclose(c.eta, eta, rel_tol=1e-12) and c.n == n:
                return c
        raise KeyError((eta, n))

    def to_csv(self) -> str:
        lines = ["eta,n,coverage,half_width,mse,ks,failed"]
        for c in self.cells:
            lines.append(",".join([_g(c.eta), str(c.n), _g(c.coverage), _g(c.half_width),
                                   _g(c.mse), _g(c.ks), str(c.failed)]))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        cells = [{k: (_r6(v) if isinstance(v, float) else v) for k, v in asdict(c).items()}
                 for c in self.cells]
        doc = {"config": self.config.describe(), "true_quantile": _r6(self.true_quantile), "cells": cells}
        return json.dumps(doc, indent=2) + "\n"


def _ks_stat(z: np.ndarray, sd: float) -> float:
    return float(stats.kstest(z, lambda t: special.ndtr(t / sd)).statistic)


def coverage_from(sim: SimulationResult) -> CoverageReport:
    cfg = sim.config
    z = z_quantile(1.0 - cfg.alpha / 2.0)
    tau = cfg.quantile.tau
    limit_sd = math.sqrt(asymptotic_variance(cfg.quantile, sim.true_density))
    cells = []
    for i, eta in enumerate(cfg.eta_grid):
        for j, n in enumerate(cfg.n_grid):
            th = sim.theta[:, i, j]
            f = sim.f_hat[:, i, j]
            ok = np.isfinite(f) & (f >= DENSITY_FLOOR)
            fs = np.where(ok, f, 1.0)
            half = z * np.sqrt(eta * tau * (1.0 - tau) / (2.0 * fs))
            covered = ok & (np.abs(th - sim.true_quantile) <= half)
            std = (th - sim.true_quantile) / math.sqrt(eta)
            cells.append(CoverageCell(
                eta=eta, n=n,
                coverage=int(covered.sum()) / cfg.replications,
                half_width=float(half[ok].mean()) if ok.any() else math.nan,
                mse=float(np.mean((th - sim.true_quantile) ** 2)),
                ks=_ks_stat(std, limit_sd),
                failed=int((~ok).sum()),
            ))
    return CoverageReport(config=cfg, true_quantile=sim.true_quantile, cells=cells)


def coverage_experiment(config: ExperimentConfig) -> CoverageReport:
    """Empirical coverage of the online interval for every (eta, n) cell.

    Replications whose density estimate falls below the floor are counted in
    ``failed`` and treated as not covering.
    """
    if min(config.n_grid) < 1:
        raise ValueError("coverage needs n >= 1 in every cell")
    return coverage_from(simulate(config))


@dataclass(frozen=True)
class MseReport:
    config: ExperimentConfig
    true_quantile: float
    curves: dict[float, list[tuple[int, float]]]

    def plateau(self, eta: float, last: int = 1) -> float:
        """Mean MSE over the ``last`` largest checkpoints."""
        pts = sorted(self.curves[eta])[-last:]
        return float(np.mean([m for _, m in pts]))

    def to_csv(self) -> str:
        lines = ["eta,n,mse"]
        for eta, pts in self.curves.items():
            lines += [f"{_g(eta)},{n},{_g(m)}" for n, m in pts]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {
            "config": self.config.describe(),
            "true_quantile": _r6(self.true_quantile),
            "curves": [{"eta": _r6(eta), "n": [n for n, _ in pts], "mse": [_r6(m) for _, m in pts]}
                       for eta, pts in self.curves.items()],
        }
        return json.dumps(doc, indent=2) + "\n"


def mse_curve(config: ExperimentConfig) -> MseReport:
    """Mean squared error of ``theta_n`` against the true quantile, per checkpoint."""
    sim = simulate(config)
    err2 = (sim.theta - sim.true_quantile) ** 2
    curves = {}
    for i, eta in enumerate(config.eta_grid):
        mse = err2[:, i, :].mean(axis=0)
        curves[eta] = sorted((n, float(m)) for n, m in zip(config.n_grid, mse))
    return MseReport(config=config, true_quantile=sim.true_quantile, curves=curves)


@dataclass(frozen=True)
class NormalityCell:
    eta: float
    n: int
    ks: float
    limit_variance: float
    edges: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class NormalityReport:
    config: ExperimentConfig
    cells: list[NormalityCell]

    def to_csv(self) -> str:
        lines = ["eta,n,ks,bin_lo,bin_hi,density"]
        for c in self.cells:
            for lo, hi, d in zip(c.edges[:-1], c.edges[1:], c.density):
                lines.append(f"{_g(c.eta)},{c.n},{_g(c.ks)},{_g(lo)},{_g(hi)},{_g(d)}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {
            "config": self.config.describe(),
            "cells": [{"eta": _r6(c.eta), "n": c.n, "ks": _r6(c.ks),
                       "limit_variance": _r6(c.limit_variance),
                       "edges": [_r6(e) for e in c.edges], "density": [_r6(d) for d in c.density]}
                      for c in self.cells],
        }
        return json.dumps(doc, indent=2) + "\n"


def normality_experiment(config: ExperimentConfig, bins: int = 40) -> NormalityReport:
    """Pool ``(theta_n - theta*) / sqrt(eta)`` over replications at the largest
    ``n`` and compare it with the limiting normal law."""
    sim = simulate(config)
    var = asymptotic_variance(config.quantile, sim.true_density)
    sd = math.sqrt(var)
    j = int(np.argmax(config.n_grid))
    n = config.n_grid[j]
    edges = np.linspace(-4 * sd, 4 * sd, bins + 1)
    cells = []
    for i, eta in enumerate(config.eta_grid):
        z = (sim.theta[:, i, j] - sim.true_quantile) / math.sqrt(eta)
        counts, _ = np.histogram(z, bins=edges)
        density = counts / (z.size * np.diff(edges))
        cells.append(NormalityCell(eta=eta, n=n, ks=_ks_stat(z, sd), limit_variance=var,
                                   edges=edges, density=density))
    return NormalityReport(config=config, cells=cells)


def write_report(report, path: str | Path | None, fmt: str = "csv") -> str:
    """Serialize ``report``; write it to ``path`` when given. Returns the text."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    text = report.to_csv() if fmt == "csv" else report.to_json()
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_grid(text: str | Sequence, kind=float) -> tuple:
    if isinstance(text, str):
        return tuple(kind(v) for v in text.split(",") if v.strip())
    return tuple(kind(v) for v in text)
