"""
Building Blocks: Mikado triples in space, intermittent triples in time

A Mikado triple (Θ, W, Ω) for direction e_j lives on the unit cell and is
pulled onto the torus as x ↦ Θ(σx). Θ and W depend only on the coordinates
orthogonal to e_j, so ΘW·e_j and W·e_j are divergence-free without any
numerical help; Ω solves div Ω = Θ on the cell, giving div_x Ω(σx) = σΘ(σx).

A temporal triple (ḡ, g̃, h) is λ⁻¹-periodic, concentrated on bumps of width
(λκ)⁻¹, normalized so that ∫₀¹ ḡg̃ dt = 1, with h = λ∫₀^t (ḡg̃ − 1).

Direction indices are 0-based throughout (j = 0..d−1).
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_simpson, trapezoid

from errors import NormalizationError
from scaling import conjugate, fit_power_law, reciprocal
from spectral_core import (
    Grid,
    check_spatial_nyquist,
    check_temporal_nyquist,
    derivative_magnitude,
    lebesgue_mean,
    spectral_antidivergence,
    spectral_divergence,
    temporal_norm,
)


logger = logging.getLogger(__name__)

PRODUCT_TOLERANCE = 1e-6
TEMPORAL_TOLERANCE = 1e-8


def radial_bump(r: np.ndarray) -> np.ndarray:
    """b(r) = exp(1 − 1/(1 − r²)) on |r| < 1, zero outside; b(0) = 1."""
    r = np.asarray(r, dtype=float)
    inside = np.abs(r) < 1.0
    q = np.where(inside, 1.0 - r**2, 1.0)
    return np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)


def _freeze(*arrays: np.ndarray) -> None:
    for arr in arrays:
        arr.flags.writeable = False


# ============================================================
# Mikado triples
# ============================================================

@dataclass(frozen=True)
class MikadoTriple:
    """Unit-cell samples of (Θ_j, W_j, Ω_j); Ω carries its components last."""

    j: int
    mu: float
    sigma: int
    p: float
    d: int
    theta: np.ndarray
    w: np.ndarray
    omega: np.ndarray

    @property
    def n_cell(self) -> int:
        return self.theta.shape[0]

    def _compose_index(self, n_x: int) -> np.ndarray:
        # x = i/n_x  ↦  σx mod 1 = ((σ·i) mod n_x)/n_x, a cell sample when n_cell = n_x
        if n_x != self.n_cell:
            raise ValueError(f"torus grid n_x={n_x} differs from cell resolution {self.n_cell}")
        return (self.sigma * np.arange(n_x)) % n_x

    def on_torus(self, grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(Θ(σx), W(σx), Ω(σx)) sampled on the spatial grid, exact at the nodes."""
        index = np.ix_(*([self._compose_index(grid.n_x)] * self.d))
        return self.theta[index], self.w[index], self.omega[index]

    def field(self, name: Literal["theta", "w", "omega"]) -> np.ndarray:
        return getattr(self, name)


def _orthogonal_profile(j: int, mu: float, d: int, n_cell: int) -> np.ndarray:
    """Zero-mean difference of concentric bumps around the e_j tube of the cell."""
    y = np.arange(n_cell) / n_cell
    grids = np.meshgrid(*([y] * d), indexing="ij")
    center = 0.25 + j / (2.0 * d)
    r2 = np.zeros((n_cell,) * d)
    for axis in range(d):
        if axis == j:
            continue
        delta = np.mod(grids[axis] - center + 0.5, 1.0) - 0.5
        r2 = r2 + delta**2
    r = np.sqrt(r2)
    inner = radial_bump(r * 4.0 * mu)
    outer = radial_bump(r * 2.0 * mu)
    phi = inner - (inner.sum() / outer.sum()) * outer
    # keep only the part of φ in the range of the discrete divergence
    return spectral_divergence(spectral_antidivergence(phi, d), d)


def build_mikado(j: int, mu: float, sigma: int, p: float, d: int, grid: Grid) -> MikadoTriple:
    """Mikado triple for direction j with concentration μ, oscillation σ and exponent p.

    Θ = μ^{(d−1)/p} c φ and W = μ^{(d−1)/p′} c φ share the cross-section φ,
    with c fixed on the grid so that the cell mean of ΘW is exactly one.
    """
    if not 0 <= j < d:
        raise ValueError(f"direction {j} out of range for d={d}")
    if mu < 1 or sigma < 1 or int(sigma) != sigma:
        raise ValueError("μ must be >= 1 and σ a positive integer")
    check_spatial_nyquist(sigma, mu, grid)

    n_cell = grid.n_x
    phi = _orthogonal_profile(j, mu, d, n_cell)
    c = 1.0 / math.sqrt(mu ** (d - 1) * float(np.mean(phi**2)))
    theta = mu ** ((d - 1) * reciprocal(p)) * c * phi
    w = mu ** ((d - 1) * reciprocal(conjugate(p))) * c * phi
    omega = spectral_antidivergence(theta, d)

    product_error = abs(float(np.mean(theta * w)) - 1.0)
    if product_error > PRODUCT_TOLERANCE:
        raise NormalizationError(f"Mikado ∫ΘW (j={j}, μ={mu})", product_error, PRODUCT_TOLERANCE)
    scale = float(np.max(np.abs(theta)))
    divergence_error = float(np.max(np.abs(spectral_divergence(omega, d) - theta)))
    if divergence_error > PRODUCT_TOLERANCE * scale:
        raise NormalizationError(f"Mikado div Ω = Θ (j={j}, μ={mu})", divergence_error / scale, PRODUCT_TOLERANCE)

    _freeze(theta, w, omega)
    logger.debug(f"[BLOCKS] Mikado j={j} μ={mu} σ={sigma} p={p}: |∫ΘW−1|={product_error:.1e}")
    return MikadoTriple(j=j, mu=float(mu), sigma=int(sigma), p=float(p), d=d, theta=theta, w=w, omega=omega)


def build_mikado_family(mu: float, sigma: int, p: float, grid: Grid) -> tuple[MikadoTriple, ...]:
    """One triple per direction, supports shifted apart."""
    return tuple(build_mikado(j, mu, sigma, p, grid.d, grid) for j in range(grid.d))


def overlap_measure(a: MikadoTriple, b: MikadoTriple, threshold: float = 1e-12) -> float:
    """Cell measure of supp(Θ_a W_b)."""
    return float(np.mean(np.abs(a.theta * b.w) > threshold))


def predicted_mikado_slope(family: str, parameter: str, m: int, r: float, p: float, d: int) -> float:
    """Exponent of μ or σ in ‖∇^m X(σ·)‖_r for X in {Θ, W, Ω}."""
    if parameter == "sigma":
        return float(m)
    concentration = {
        "theta": reciprocal(p),
        "w": reciprocal(conjugate(p)),
        "omega": reciprocal(p),
    }[family]
    offset = -1.0 if family == "omega" else 0.0
    return m + offset + (d - 1) * concentration - (d - 1) * reciprocal(r)


def _swept_parameter(values_mu: Sequence[float], values_sigma: Sequence[int]) -> str:
    vary_mu = len(set(values_mu)) > 1
    vary_sigma = len(set(values_sigma)) > 1
    if vary_mu == vary_sigma:
        raise ValueError("a scaling family must sweep exactly one of μ and σ")
    return "mu" if vary_mu else "sigma"


def mikado_scaling_report(
    triple_family: Sequence[MikadoTriple],
    r_list: Sequence[float],
    m_list: Sequence[int],
    grid: Grid,
) -> pd.DataFrame:
    """Fit the measured torus norms of Θ, W, Ω against their predicted exponents."""
    if len(triple_family) < 4:
        raise ValueError(f"under-resolved sweep: {len(triple_family)} points (need >= 4)")
    parameter = _swept_parameter([t.mu for t in triple_family], [t.sigma for t in triple_family])
    first = triple_family[0]
    if any(t.j != first.j or t.p != first.p for t in triple_family):
        raise ValueError("a scaling family must share direction and exponent")
    abscissa = [getattr(t, parameter) for t in triple_family]

    rows = []
    for family in ("theta", "w", "omega"):
        for m in m_list:
            for r in r_list:
                norms = []
                for triple in triple_family:
                    theta, w, omega = triple.on_torus(grid)
                    values = {"theta": theta, "w": w, "omega": omega}[family]
                    mag = derivative_magnitude(values, grid.d, m, vector=family == "omega")
                    norms.append(float(lebesgue_mean(mag, r, grid.d)))
                fit = fit_power_law(abscissa, norms)
                rows.append(
                    {
                        "family": family,
                        "parameter": parameter,
                        "m": m,
                        "r": r,
                        "predicted_slope": predicted_mikado_slope(family, parameter, m, r, first.p, grid.d),
                        "fitted_slope": fit.slope,
                        "residual": fit.residual,
                    }
                )
    report = pd.DataFrame(rows)
    worst = float((report["fitted_slope"] - report["predicted_slope"]).abs().max())
    logger.info(f"[BLOCKS] Mikado scaling over {parameter}: {len(rows)} fits, worst slope gap {worst:.3f}")
    return report


# ============================================================
# Temporal triples
# ============================================================

def _bump_derivative(z: np.ndarray, order: int) -> np.ndarray:
    """d^order/dz^order of exp(1 − 1/(1 − z²)) for order ≤ 2."""
    inside = np.abs(z) < 1.0
    q = np.where(inside, 1.0 - z**2, 1.0)
    b = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
    if order == 0:
        return b
    e1 = -2.0 * z / q**2
    if order == 1:
        return np.where(inside, e1 * b, 0.0)
    if order == 2:
        e2 = -2.0 / q**2 - 8.0 * z**2 / q**3
        return np.where(inside, (e2 + e1**2) * b, 0.0)
    raise ValueError(f"analytic bump derivatives available up to order 2 (got {order})")


def _slot_bump(times: np.ndarray, lam: int, kappa_eff: float, d: int, slot: int, order: int) -> np.ndarray:
    """∂_t^order of the bump of width (λκ_eff)⁻¹ centred in `slot` of every λ⁻¹-period."""
    phase = np.mod(lam * times, 1.0)
    stretch = 2.0 * kappa_eff
    center = (slot + 0.5) / (2.0 * d)
    return (lam * stretch) ** order * _bump_derivative((phase - center) * stretch, order)


@dataclass(frozen=True)
class TemporalTriple:
    """Samples of (ḡ_j, g̃_j, h_j) on the time grid plus the closed form behind them.

    Each λ⁻¹-period is split into 2d slots; direction j owns slot 2j for its
    positive lobe and slot 2j+1 for its negative lobe, so profiles of distinct
    directions never overlap in time.
    """

    j: int
    kappa: float
    lam: int
    s: float
    d: int
    times: np.ndarray
    g_bar: np.ndarray
    g_tilde: np.ndarray
    h: np.ndarray
    amplitude: float
    lobe_ratio: float

    @property
    def kappa_eff(self) -> float:
        return max(self.kappa, 2.0 * self.d)

    def _lobes(self, order: int) -> np.ndarray:
        args = (self.times, self.lam, self.kappa_eff, self.d)
        return _slot_bump(*args, 2 * self.j, order) - self.lobe_ratio * _slot_bump(*args, 2 * self.j + 1, order)

    def derivative(self, which: Literal["g_bar", "g_tilde"], order: int = 1) -> np.ndarray:
        """Analytic ∂_t^order of ḡ or g̃ at the grid times."""
        weight = self.kappa ** reciprocal(conjugate(self.s)) if which == "g_bar" else self.kappa ** reciprocal(self.s)
        return self.amplitude * weight * self._lobes(order)

    def unit_profile(self, which: Literal["g_bar", "g_tilde"], n: int) -> np.ndarray:
        """One period of ḡ or g̃ as a function of λt, sampled at k/n."""
        tau = np.arange(n) / n
        args = (tau, 1, self.kappa_eff, self.d)
        base = _slot_bump(*args, 2 * self.j, 0) - self.lobe_ratio * _slot_bump(*args, 2 * self.j + 1, 0)
        weight = self.kappa ** reciprocal(conjugate(self.s)) if which == "g_bar" else self.kappa ** reciprocal(self.s)
        return self.amplitude * weight * base


def build_temporal(j: int, kappa: float, lam: int, s: float, n_t: int, d: int = 2) -> TemporalTriple:
    """Temporal triple for direction j; ḡ carries κ^{1/s′}, g̃ carries κ^{1/s}."""
    if kappa < 1 or lam < 1 or int(lam) != lam:
        raise ValueError("κ must be >= 1 and λ a positive integer")
    kappa_eff = max(kappa, 2.0 * d)
    check_temporal_nyquist(lam, kappa_eff, n_t)

    times = np.linspace(0.0, 1.0, n_t)
    positive = _slot_bump(times, lam, kappa_eff, d, 2 * j, 0)
    negative = _slot_bump(times, lam, kappa_eff, d, 2 * j + 1, 0)
    lobe_ratio = float(trapezoid(positive, times) / trapezoid(negative, times))
    base = positive - lobe_ratio * negative
    amplitude = 1.0 / math.sqrt(kappa * float(trapezoid(base**2, times)))

    g_bar = amplitude * kappa ** reciprocal(conjugate(s)) * base
    g_tilde = amplitude * kappa ** reciprocal(s) * base
    h = lam * cumulative_simpson(g_bar * g_tilde - 1.0, x=times, initial=0.0)

    product_error = abs(float(trapezoid(g_bar * g_tilde, times)) - 1.0)
    if product_error > TEMPORAL_TOLERANCE:
        raise NormalizationError(f"temporal ∫ḡg̃ (j={j}, κ={kappa})", product_error, TEMPORAL_TOLERANCE)
    mean_error = abs(float(trapezoid(g_bar, times)))
    if mean_error > TEMPORAL_TOLERANCE * max(1.0, float(np.max(np.abs(g_bar)))):
        raise NormalizationError(f"temporal zero mean (j={j}, κ={kappa})", mean_error, TEMPORAL_TOLERANCE)

    _freeze(times, g_bar, g_tilde, h)
    logger.debug(f"[BLOCKS] temporal j={j} κ={kappa} λ={lam}: ‖h‖∞={np.max(np.abs(h)):.3f}")
    return TemporalTriple(
        j=j, kappa=float(kappa), lam=int(lam), s=float(s), d=d, times=times,
        g_bar=g_bar, g_tilde=g_tilde, h=h, amplitude=amplitude, lobe_ratio=lobe_ratio,
    )


def build_temporal_family(kappa: float, lam: int, s: float, grid: Grid) -> tuple[TemporalTriple, ...]:
    return tuple(build_temporal(j, kappa, lam, s, grid.n_t, grid.d) for j in range(grid.d))


def predicted_temporal_slope(which: str, m: int, r: float, s: float) -> float:
    weight = reciprocal(conjugate(s)) if which == "g_bar" else reciprocal(s)
    return m + weight - reciprocal(r)


def temporal_scaling_report(
    triple_family: Sequence[TemporalTriple], r_list: Sequence[float], m_list: Sequence[int]
) -> pd.DataFrame:
    """Fit ‖∂_t^m ḡ‖_r and ‖∂_t^m g̃‖_r over a κ sweep."""
    if len(triple_family) < 4:
        raise ValueError(f"under-resolved sweep: {len(triple_family)} points (need >= 4)")
    kappas = [t.kappa for t in triple_family]
    if len(set(kappas)) != len(kappas) or len({t.lam for t in triple_family}) > 1:
        raise ValueError("a temporal family must sweep κ at fixed λ")
    first = triple_family[0]
    rows = []
    for which in ("g_bar", "g_tilde"):
        for m in m_list:
            for r in r_list:
                norms = [
                    temporal_norm(np.abs(t.derivative(which, m)), r, t.times) for t in triple_family
                ]
                fit = fit_power_law(kappas, norms)
                rows.append(
                    {
                        "family": which,
                        "parameter": "kappa",
                        "m": m,
                        "r": r,
                        "predicted_slope": predicted_temporal_slope(which, m, r, first.s),
                        "fitted_slope": fit.slope,
                        "residual": fit.residual,
                    }
                )
    logger.info(f"[BLOCKS] temporal scaling over κ: {len(rows)} fits")
    return pd.DataFrame(rows)
