"""
Log-log power-law fits used by every scaling report.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class PowerLawFit:
    """y ≈ C·x^slope fitted by least squares in log-log space."""

    slope: float
    intercept: float
    residual: float
    stderr: float
    n_points: int

    @property
    def prefactor(self) -> float:
        return math.exp(self.intercept)


def fit_power_law(x: Sequence[float], y: Sequence[float]) -> PowerLawFit:
    """Fit log y = slope·log x + intercept.

    `residual` is the largest absolute deviation of a sample from the fitted
    line in log space, a direct read of how far the data is from a clean power.
    """
    log_x = np.log(np.asarray(x, dtype=float))
    log_y = np.log(np.asarray(y, dtype=float))
    if log_x.size < 2:
        raise ValueError("a power-law fit needs at least two points")
    if not (np.all(np.isfinite(log_x)) and np.all(np.isfinite(log_y))):
        raise ValueError("power-law fit requires strictly positive samples")
    result = stats.linregress(log_x, log_y)
    deviation = log_y - (result.slope * log_x + result.intercept)
    return PowerLawFit(
        slope=float(result.slope),
        intercept=float(result.intercept),
        residual=float(np.max(np.abs(deviation))),
        stderr=float(result.stderr) if log_x.size > 2 else 0.0,
        n_points=int(log_x.size),
    )


def reciprocal(p: float) -> float:
    """1/p with 1/∞ = 0."""
    return 0.0 if math.isinf(p) else 1.0 / p


def conjugate(p: float) -> float:
    """Hölder conjugate p′ with 1′ = ∞ and ∞′ = 1."""
    if math.isinf(p):
        return 1.0
    if p == 1.0:
        return math.inf
    return p / (p - 1.0)
