"""Online quantile estimation with constant learning-rate SGD.

The package covers the SGD recursion on its rational lattice, a recursive
density estimate for plug-in confidence intervals, an exact solver for the
stationary law of the iterate chain, and a Monte Carlo harness.
"""

from .core import RationalQuantile, SgdConfig, SgdState, Trajectory, run_stream, sgd_step
from .density import Kernel, KdeState, kde_estimate, kde_update
from .distributions import Beta, Cauchy, Normal, Uniform, make_rng, parse_distribution
from .inference import ConfidenceInterval, StreamingEstimator, confidence_interval
from .oracle import build_chain, closed_form_median, stationary_solve

__version__ = "0.1.0"

__all__ = [
    "RationalQuantile",
    "SgdConfig",
    "SgdState",
    "Trajectory",
    "run_stream",
    "sgd_step",
    "Kernel",
    "KdeState",
    "kde_estimate",
    "kde_update",
    "Beta",
    "Cauchy",
    "Normal",
    "Uniform",
    "make_rng",
    "parse_distribution",
    "ConfidenceInterval",
    "StreamingEstimator",
    "confidence_interval",
    "build_chain",
    "closed_form_median",
    "stationary_solve",
]
