"""
Flow Geometry: Lagrangian charts along the transporting field u

The unit time interval is cut into D = 1/ν intervals I_i = [iν, (i+1)ν] with
anchors t_i = (i+½)ν. On each one the flow map Φ_i solves
∂_tΦ_i + (u·∇)Φ_i = 0 with Φ_i(t_i, x) = x, so Φ_i(t, x) is the foot at time
t_i of the characteristic through (t, x). A smooth partition of unity ζ_i,
with overlaps of width λ^{-1/2}ν, glues the charts together.

Maps are stored as unwrapped positions Φ_i(t, x) = x + D_i(t, x); only the
displacement D_i is periodic, and gradients are taken on it.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import ndimage

from errors import ChartError, ResolutionError
from scaling import PowerLawFit, fit_power_law
from spectral_core import (
    Grid,
    MixedNormSpec,
    PeriodicSpline,
    SpaceTimeField,
    check_spatial_nyquist,
    mixed_norm,
    spectral_antidivergence,
    spectral_divergence,
    spectral_gradient,
)


logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e6
DIVERGENCE_FREE_TOLERANCE = 1e-6
SPATIAL_PAD = 24
SPLINE_ORDER = 5


# ============================================================
# Smooth ramps
# ============================================================

def _psi(z: np.ndarray) -> np.ndarray:
    """exp(−1/z) for z > 0, zero otherwise."""
    z = np.asarray(z, dtype=float)
    positive = z > 0.0
    return np.where(positive, np.exp(-1.0 / np.where(positive, z, 1.0)), 0.0)


def _psi_prime(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    positive = z > 0.0
    safe = np.where(positive, z, 1.0)
    return np.where(positive, np.exp(-1.0 / safe) / safe**2, 0.0)


def smooth_ramp(z: np.ndarray) -> np.ndarray:
    """C^∞ transition from 0 (z ≤ 0) to 1 (z ≥ 1), symmetric about (½, ½)."""
    a = _psi(z)
    return a / (a + _psi(1.0 - np.asarray(z, dtype=float)))


def smooth_ramp_prime(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    a, b = _psi(z), _psi(1.0 - z)
    da, db = _psi_prime(z), _psi_prime(1.0 - z)
    return (da * b + a * db) / (a + b) ** 2


# ============================================================
# Velocity interpolation and characteristic tracing
# ============================================================

class VelocityInterpolant:
    """Space-time quintic spline of u.

    Spatial axes are padded periodically so that the single boundary mode of
    ndimage ('mirror') only acts along time.
    """

    def __init__(self, u: SpaceTimeField):
        if not u.is_vector:
            raise ValueError("velocity must be a vector field")
        self.grid = u.grid
        self.is_zero = not np.any(u.values)
        self._coeffs: list[np.ndarray] = []
        if self.is_zero:
            return
        pad = [(0, 0)] + [(SPATIAL_PAD, SPATIAL_PAD)] * self.grid.d
        for c in range(self.grid.d):
            padded = np.pad(u.values[..., c], pad, mode="wrap")
            self._coeffs.append(ndimage.spline_filter(padded, order=SPLINE_ORDER, mode="mirror"))

    def __call__(self, t: float, points: np.ndarray) -> np.ndarray:
        if self.is_zero:
            return np.zeros_like(points)
        flat = points.reshape(-1, self.grid.d)
        time_coord = np.full(flat.shape[0], t * (self.grid.n_t - 1))
        space = [np.mod(flat[:, a], 1.0) * self.grid.n_x + SPATIAL_PAD for a in range(self.grid.d)]
        coords = np.stack([time_coord, *space])
        out = np.stack(
            [
                ndimage.map_coordinates(coeff, coords, order=SPLINE_ORDER, mode="mirror", prefilter=False)
                for coeff in self._coeffs
            ],
            axis=-1,
        )
        return out.reshape(points.shape)


def trace_characteristics(
    velocity: VelocityInterpolant, points: np.ndarray, t_from: float, t_to: float, h_max: float
) -> np.ndarray:
    """RK4 solution of dX/dτ = u(τ, X) from X(t_from) = points to τ = t_to."""
    span = t_to - t_from
    if span == 0.0 or velocity.is_zero:
        return np.array(points, dtype=float)
    steps = max(1, math.ceil(abs(span) / h_max - 1e-12))
    h = span / steps
    x = np.array(points, dtype=float)
    t = t_from
    for _ in range(steps):
        k1 = velocity(t, x)
        k2 = velocity(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = velocity(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = velocity(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return x


# ============================================================
# Charts
# ============================================================

@dataclass(frozen=True)
class FlowChart:
    """One Lagrangian chart, sampled on the time window where ζ_i ≠ 0.

    positions and inv_grad cover grid times window[0]..window[1] inclusive;
    zeta and zeta_dot cover the full time grid.
    """

    i: int
    interval: tuple[float, float]
    anchor: float
    window: tuple[int, int]
    zeta: np.ndarray
    zeta_dot: np.ndarray
    positions: np.ndarray
    inv_grad: np.ndarray
    det_error: float
    inv_grad_deviation: float
    max_condition: float

    @property
    def window_slice(self) -> slice:
        return slice(self.window[0], self.window[1] + 1)

    @property
    def n_window(self) -> int:
        return self.window[1] - self.window[0] + 1

    def compose(self, cell: np.ndarray, sigma: int) -> np.ndarray:
        """g(σΦ_i) on the window for a unit-cell field (vector components last)."""
        cell = np.asarray(cell, dtype=float)
        d = self.positions.shape[-1]
        scaled = sigma * self.positions
        if cell.ndim == d:
            return PeriodicSpline(cell)(scaled)
        return np.stack([PeriodicSpline(cell[..., c])(scaled) for c in range(cell.shape[-1])], axis=-1)

    def embed(self, window_values: np.ndarray, n_t: int) -> np.ndarray:
        """Zero-extend window samples to the full time grid."""
        out = np.zeros((n_t, *window_values.shape[1:]))
        out[self.window_slice] = window_values
        return out

    def apply_inverse(self, vectors: np.ndarray) -> np.ndarray:
        """(∇Φ_i)⁻¹ v for window-shaped vector samples."""
        return np.einsum("...ab,...b->...a", self.inv_grad, vectors)


@dataclass(frozen=True)
class ChartAtlas:
    nu: float
    lam: float
    overlap: float
    charts: tuple[FlowChart, ...]

    @property
    def n_charts(self) -> int:
        return len(self.charts)

    def partition_sum(self) -> np.ndarray:
        return np.sum([c.zeta for c in self.charts], axis=0)

    def overlap_constants(self, times: np.ndarray) -> dict[str, float]:
        """meas{supp ζ_iζ_{i+1}}·λ^{1/2} and ‖ζ̇‖_∞·λ^{-1/2}, the two overlap-decay constants."""
        dt = times[1] - times[0]
        measure = 0.0
        for left, right in zip(self.charts, self.charts[1:]):
            measure = max(measure, float(np.count_nonzero(left.zeta * right.zeta > 0.0)) * dt)
        zeta_dot = max(float(np.max(np.abs(c.zeta_dot))) for c in self.charts)
        root = math.sqrt(self.lam)
        return {"overlap_measure": measure * root, "zeta_dot": zeta_dot / root}

    @property
    def flow_closeness(self) -> float:
        """max_i ‖(∇Φ_i)⁻¹ − Id‖ over I_i × T^d."""
        return max(c.inv_grad_deviation for c in self.charts)


def _partition(n_charts: int, nu: float, width: float, times: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    # H_k rises across the k-th chart boundary; ζ_i = H_i − H_{i+1} telescopes to 1
    steps, slopes = [], []
    for k in range(n_charts + 1):
        if k == 0:
            steps.append(np.ones_like(times))
            slopes.append(np.zeros_like(times))
        elif k == n_charts:
            steps.append(np.zeros_like(times))
            slopes.append(np.zeros_like(times))
        else:
            z = (times - k * nu + 0.5 * width) / width
            steps.append(smooth_ramp(z))
            slopes.append(smooth_ramp_prime(z) / width)
    zetas = [steps[i] - steps[i + 1] for i in range(n_charts)]
    zeta_dots = [slopes[i] - slopes[i + 1] for i in range(n_charts)]
    return zetas, zeta_dots


def _chart_maps(
    velocity: VelocityInterpolant, grid: Grid, anchor: float, window: tuple[int, int], h_max: float
) -> np.ndarray:
    """Φ_i on the window, one time step at a time.

    Φ(t_{k'}, x) = Φ(t_k, Y) with Y the foot at t_k of the characteristic
    through (t_{k'}, x); the periodic displacement of Φ(t_k) is splined.
    """
    times = grid.times()
    points = grid.points()
    k0, k1 = window
    out = np.empty((k1 - k0 + 1, *grid.spatial_shape, grid.d))
    if velocity.is_zero:
        out[:] = points
        return out

    center = int(np.clip(round(anchor / grid.dt), k0, k1))
    out[center - k0] = trace_characteristics(velocity, points, times[center], anchor, h_max)

    def step(k_known: int, k_new: int) -> None:
        feet = trace_characteristics(velocity, points, times[k_new], times[k_known], h_max)
        displacement = out[k_known - k0] - points
        shifted = np.stack(
            [PeriodicSpline(displacement[..., c])(feet) for c in range(grid.d)], axis=-1
        )
        out[k_new - k0] = feet + shifted

    for k in range(center + 1, k1 + 1):
        step(k - 1, k)
    for k in range(center - 1, k0 - 1, -1):
        step(k + 1, k)
    return out


def _map_gradient(positions: np.ndarray, grid: Grid) -> np.ndarray:
    displacement = positions - grid.points()
    rows = [spectral_gradient(displacement[..., c], grid.d) for c in range(grid.d)]
    return np.eye(grid.d) + np.stack(rows, axis=-2)


def build_atlas(u: SpaceTimeField, nu: float, lam: float, grid: Grid) -> ChartAtlas:
    """Charts Φ_i, inverse gradients and partition of unity for width ν and oscillation λ."""
    n_charts = round(1.0 / nu)
    if n_charts < 1 or abs(n_charts * nu - 1.0) > 1e-9:
        raise ValueError(f"1/ν must be a positive integer (ν={nu})")
    if u.grid != grid:
        raise ValueError("velocity lives on a different grid")
    divergence = float(np.max(np.abs(spectral_divergence(u.values, grid.d))))
    if divergence > DIVERGENCE_FREE_TOLERANCE * max(1.0, float(np.max(np.abs(u.values)))):
        raise ValueError(f"velocity is not divergence-free (‖div u‖∞ = {divergence:.2e})")

    width = nu / math.sqrt(lam)
    if width / grid.dt < 2.0:
        raise ResolutionError("chart overlap", width / grid.dt)

    times = grid.times()
    zetas, zeta_dots = _partition(n_charts, nu, width, times)
    velocity = VelocityInterpolant(u)
    h_max = min(nu / 16.0, grid.dt)

    charts = []
    for i in range(n_charts):
        anchor = (i + 0.5) * nu
        support = np.nonzero(zetas[i] > 0.0)[0]
        window = (max(0, int(support[0]) - 1), min(grid.n_t - 1, int(support[-1]) + 1))
        positions = _chart_maps(velocity, grid, anchor, window, h_max)
        jac = _map_gradient(positions, grid)

        condition = np.linalg.cond(jac)
        worst = np.unravel_index(int(np.argmax(condition)), condition.shape)
        if condition[worst] > CONDITION_LIMIT:
            x = grid.points()[worst[1:]]
            raise ChartError(i, float(condition[worst]), float(times[window[0] + worst[0]]), x)
        inv_grad = np.linalg.inv(jac)

        det_error = float(np.max(np.abs(np.linalg.det(jac) - 1.0)))
        on_interval = (times[window[0] : window[1] + 1] >= i * nu - 1e-12) & (
            times[window[0] : window[1] + 1] <= (i + 1) * nu + 1e-12
        )
        deviation = inv_grad[on_interval] - np.eye(grid.d)
        inv_dev = float(np.max(np.linalg.norm(deviation, ord=2, axis=(-2, -1)))) if deviation.size else 0.0

        for arr in (zetas[i], zeta_dots[i], positions, inv_grad):
            arr.flags.writeable = False
        charts.append(
            FlowChart(
                i=i,
                interval=(i * nu, (i + 1) * nu),
                anchor=anchor,
                window=window,
                zeta=zetas[i],
                zeta_dot=zeta_dots[i],
                positions=positions,
                inv_grad=inv_grad,
                det_error=det_error,
                inv_grad_deviation=inv_dev,
                max_condition=float(condition[worst]),
            )
        )
        logger.debug(
            f"[FLOW] chart {i}: window {window}, |det−1|={det_error:.1e}, ‖M−I‖={inv_dev:.2e}"
        )

    atlas = ChartAtlas(nu=nu, lam=float(lam), overlap=width, charts=tuple(charts))
    logger.info(f"[FLOW] ✓ Atlas with {n_charts} charts (ν={nu:g}, overlap {width:.3g}, closeness {atlas.flow_closeness:.2e})")
    return atlas


def atlas_report(atlas: ChartAtlas) -> pd.DataFrame:
    """Per-chart geometry table for the `flow` subcommand."""
    return pd.DataFrame(
        [
            {
                "chart": c.i,
                "t_start": c.interval[0],
                "t_end": c.interval[1],
                "anchor": c.anchor,
                "det_error": c.det_error,
                "inv_grad_minus_id": c.inv_grad_deviation,
                "max_condition": c.max_condition,
            }
            for c in atlas.charts
        ]
    )


# ============================================================
# Identities on charts
# ============================================================

def inverse_map_divergence_check(chart: FlowChart, G: np.ndarray, grid: Grid) -> float:
    """‖div[(∇Φ)⁻¹ G∘Φ] − (div G)∘Φ‖_∞ over the chart window.

    G is a spatial vector field sampled on the grid (components last).
    """
    composed = chart.compose(G, 1)
    div_g = chart.compose(spectral_divergence(G, grid.d), 1)
    lhs = spectral_divergence(chart.apply_inverse(composed), grid.d)
    return float(np.max(np.abs(lhs - div_g)))


def improved_anti_divergence(
    f: SpaceTimeField, g: np.ndarray, sigma: int, grid: Grid, chart: Optional[FlowChart] = None
) -> SpaceTimeField:
    """v with div v = f·g(σΦ) − ⨍ f·g(σΦ) at every time sample.

    Without a chart Φ is the identity. With one, v is computed on the chart
    window and vanishes outside it.
    """
    if chart is None:
        check_spatial_nyquist(sigma, 1.0, grid)
        product = f.values * PeriodicSpline(g)(sigma * grid.identity_positions())
        return SpaceTimeField(grid, spectral_antidivergence(product, grid.d))
    grad_sup = float(np.max(np.linalg.norm(np.linalg.inv(chart.inv_grad), ord=2, axis=(-2, -1))))
    check_spatial_nyquist(sigma, 1.0, grid, factor=grad_sup)
    product = f.values[chart.window_slice] * chart.compose(g, sigma)
    return SpaceTimeField(grid, chart.embed(spectral_antidivergence(product, grid.d), grid.n_t))


@dataclass(frozen=True)
class AntiDivergenceSweep:
    sigmas: tuple[int, ...]
    norms: tuple[float, ...]
    fit: PowerLawFit
    predicted_slope: float


def improved_antidivergence_sweep(
    f: SpaceTimeField,
    g: np.ndarray,
    sigmas: Sequence[int],
    grid: Grid,
    chart: Optional[FlowChart] = None,
    r: float = 2.0,
    m: int = 0,
) -> AntiDivergenceSweep:
    """σ-decay of ‖∇^m v‖_{L^r} for the improved anti-divergence; predicted σ^{m−1}."""
    if len(sigmas) < 4:
        raise ValueError(f"under-resolved sweep: {len(sigmas)} points (need >= 4)")
    spec = MixedNormSpec(s=r, p=r, derivative_order=m)
    norms = [mixed_norm(improved_anti_divergence(f, g, s, grid, chart), spec) for s in sigmas]
    fit = fit_power_law(sigmas, norms)
    logger.info(f"[FLOW] improved anti-divergence σ-slope {fit.slope:.3f} (predicted {m - 1})")
    return AntiDivergenceSweep(tuple(sigmas), tuple(norms), fit, float(m - 1))
