"""
Defect Prep: cutoffs χ_j of the defect field and the coefficients a_j, b_j

χ_j switches the j-th defect component on where |R_j| ≥ δ/(8d) and t ∈ I_r,
and off where |R_j| ≤ δ/(16d) or t ∉ I_{r/2}, with I_r = [r, 1 − r]. The
coefficients split −χ_j²R_j into a_j·b_j, redistributing mass in time with
the weight ‖R̃_j(t)‖_{L¹}/‖R̃_j‖_{L¹_{t,x}}, R̃_j = χ_jR_j.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from errors import ResolutionError
from flow_geometry import smooth_ramp
from scaling import conjugate, reciprocal
from spectral_core import Grid, SpaceTimeField, derivative_magnitude, lebesgue_mean, space_time_c1


logger = logging.getLogger(__name__)

MARGIN_CAP = 1.0 / 8.0
RATIO_FLOOR = 1e-12
MIN_BAND_CELLS = 2.0


def choose_margin(R: SpaceTimeField, delta: float) -> float:
    """r = min(1/8, δ/(32d‖R‖_∞)), half the largest margin the cutoff estimate allows."""
    if delta <= 0:
        raise ValueError(f"δ must be positive (got {delta})")
    sup = float(np.max(R.magnitude()))
    if sup == 0.0:
        return MARGIN_CAP
    return min(MARGIN_CAP, delta / (32.0 * R.grid.d * sup))


def time_cutoff(times: np.ndarray, r: float) -> np.ndarray:
    """T(t): 0 outside I_{r/2}, 1 on I_r."""
    half = 0.5 * r
    return smooth_ramp((times - half) / half) * smooth_ramp((1.0 - half - times) / half)


def value_cutoff(values: np.ndarray, delta: float, d: int) -> np.ndarray:
    """S(|R_j|): 0 below δ/(16d), 1 above δ/(8d)."""
    low = delta / (16.0 * d)
    return smooth_ramp((np.abs(values) - low) / low)


@dataclass(frozen=True)
class CutoffSet:
    """χ_j and R̃_j = χ_jR_j, with the direction index j on the last axis."""

    delta: float
    r: float
    chi: np.ndarray
    cut: np.ndarray
    spatial_band_cells: float
    time_band_cells: float

    @property
    def d(self) -> int:
        return self.chi.shape[-1]


def build_cutoffs(R: SpaceTimeField, delta: float, r: float, grid: Grid) -> CutoffSet:
    if not R.is_vector:
        raise ValueError("the defect must be a vector field")
    d = grid.d
    time_band_cells = 0.5 * r / grid.dt
    if time_band_cells < MIN_BAND_CELLS:
        raise ResolutionError("time cutoff", time_band_cells, MIN_BAND_CELLS)

    band = delta / (16.0 * d)
    steepest = max(
        float(np.max(derivative_magnitude(R.values[..., j], d, 1))) for j in range(d)
    )
    spatial_band_cells = math.inf if steepest == 0.0 else band / steepest / grid.dx
    if spatial_band_cells < MIN_BAND_CELLS:
        raise ResolutionError("value cutoff", spatial_band_cells, MIN_BAND_CELLS)

    shape = (grid.n_t,) + (1,) * d
    temporal = time_cutoff(grid.times(), r).reshape(shape)
    chi = np.stack([value_cutoff(R.values[..., j], delta, d) * temporal for j in range(d)], axis=-1)
    cut = chi * R.values
    chi.flags.writeable = False
    cut.flags.writeable = False
    logger.info(f"[CUTOFF] ✓ Cutoffs at δ={delta:.3e}, r={r:.4f}, active fraction {np.mean(chi > 0):.3f}")
    return CutoffSet(
        delta=delta,
        r=r,
        chi=chi,
        cut=cut,
        spatial_band_cells=spatial_band_cells,
        time_band_cells=time_band_cells,
    )


def remainder_l1(cutoffs: CutoffSet, R: SpaceTimeField) -> float:
    """‖Σ_j(1 − χ_j²)R_j e_j‖_{L¹_{t,x}}; must stay within δ/4."""
    remainder = (1.0 - cutoffs.chi**2) * R.values
    profile = np.mean(np.sqrt(np.sum(remainder**2, axis=-1)), axis=tuple(range(1, R.grid.d + 1)))
    return float(trapezoid(profile, R.grid.times()))


@dataclass(frozen=True)
class CoefficientFields:
    a: np.ndarray
    b: np.ndarray
    weights: np.ndarray
    totals: np.ndarray
    active: tuple[bool, ...]
    c1_a: tuple[float, ...]
    c1_b: tuple[float, ...]
    s: float
    p: float

    def lp_bound_violation(self, grid: Grid) -> float:
        """Worst relative excess of ‖a_j(t)‖_p and ‖b_j(t)‖_{p′} over their time-weight bounds."""
        worst = 0.0
        for j, on in enumerate(self.active):
            if not on:
                continue
            total, weight = self.totals[j], self.weights[j]
            pairs = (
                (self.a[..., j], self.p, total ** (reciprocal(self.p) - reciprocal(self.s)) * weight ** reciprocal(self.s)),
                (self.b[..., j], conjugate(self.p), total ** (reciprocal(self.s) - reciprocal(self.p)) * weight ** reciprocal(conjugate(self.s))),
            )
            for field, exponent, bound in pairs:
                norm = lebesgue_mean(np.abs(field), exponent, grid.d)
                excess = (norm - bound) / np.maximum(bound, 1e-300)
                resolved = (norm > 0) & (weight > RATIO_FLOOR * total)
                worst = max(worst, float(np.max(np.where(resolved, excess, 0.0))))
        return worst


def build_coefficients(cutoffs: CutoffSet, R: SpaceTimeField, s: float, p: float) -> CoefficientFields:
    """a_j = w^{1/s−1/p} sign(−R_j)χ_j|R_j|^{1/p},  b_j = w^{1/p−1/s} χ_j|R_j|^{1/p′}."""
    grid = R.grid
    d = grid.d
    times = grid.times()
    spatial_axes = tuple(range(1, d + 1))
    inv_s, inv_p, inv_pc = reciprocal(s), reciprocal(p), reciprocal(conjugate(p))

    a = np.zeros(grid.vector_shape)
    b = np.zeros(grid.vector_shape)
    weights = np.zeros((d, grid.n_t))
    totals = np.zeros(d)
    active = []
    c1_a, c1_b = [], []
    shape = (grid.n_t,) + (1,) * d
    for j in range(d):
        weights[j] = np.mean(np.abs(cutoffs.cut[..., j]), axis=spatial_axes)
        totals[j] = float(trapezoid(weights[j], times))
        if not totals[j] > 0.0:
            logger.info(f"[CUTOFF] direction {j} inactive (‖R̃_j‖_L¹ = 0), skipped")
            active.append(False)
            c1_a.append(0.0)
            c1_b.append(0.0)
            continue
        ratio = np.maximum(weights[j] / totals[j], RATIO_FLOOR)
        if not np.all(np.isfinite(ratio)):
            raise ValueError(f"time-weight ratio for direction {j} is not finite")
        R_j = R.values[..., j]
        chi_j = cutoffs.chi[..., j]
        a[..., j] = (ratio ** (inv_s - inv_p)).reshape(shape) * np.sign(-R_j) * chi_j * np.abs(R_j) ** inv_p
        b[..., j] = (ratio ** (inv_p - inv_s)).reshape(shape) * chi_j * np.abs(R_j) ** inv_pc
        active.append(True)
        c1_a.append(space_time_c1(a[..., j], grid))
        c1_b.append(space_time_c1(b[..., j], grid))

    for arr in (a, b, weights, totals):
        arr.flags.writeable = False
    logger.info(f"[CUTOFF] ✓ Coefficients for {sum(active)}/{d} active directions (s={s:g}, p={p:g})")
    return CoefficientFields(
        a=a, b=b, weights=weights, totals=totals, active=tuple(active),
        c1_a=tuple(c1_a), c1_b=tuple(c1_b), s=s, p=p,
    )
