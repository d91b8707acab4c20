"""Tests for Mikado and temporal building blocks."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import trapezoid

from building_blocks import (
    build_mikado,
    build_temporal,
    build_temporal_family,
    mikado_scaling_report,
    predicted_mikado_slope,
    predicted_temporal_slope,
    radial_bump,
    temporal_scaling_report,
)
from errors import NyquistError
from spectral_core import Grid, spectral_divergence, spectral_partial


class TestRadialBump:
    def test_peak_and_support(self):
        assert radial_bump(np.array(0.0)) == pytest.approx(1.0)
        assert_allclose(radial_bump(np.array([1.0, 1.5, -2.0])), 0.0)


class TestMikado:
    """Normalization and geometry of the stationary building blocks."""

    @pytest.fixture
    def grid(self) -> Grid:
        return Grid(d=2, n_x=32, n_t=17)

    @pytest.mark.parametrize("p", [1.0, 1.5, 3.0])
    def test_product_has_unit_mean(self, grid, p):
        triple = build_mikado(0, 2.0, 1, p, 2, grid)
        assert float(np.mean(triple.theta * triple.w)) == pytest.approx(1.0, abs=1e-6)

    def test_theta_is_divergence_of_omega(self, grid):
        triple = build_mikado(1, 2.0, 1, 2.0, 2, grid)
        assert_allclose(spectral_divergence(triple.omega, 2), triple.theta, atol=1e-10)

    def test_constant_along_tube(self, grid):
        for j in range(2):
            triple = build_mikado(j, 2.0, 1, 2.0, 2, grid)
            assert_allclose(spectral_partial(triple.theta, 2, j), 0.0, atol=1e-9)

    def test_zero_mean(self, grid):
        triple = build_mikado(0, 2.0, 1, 1.5, 2, grid)
        assert abs(float(triple.theta.mean())) < 1e-12
        assert abs(float(triple.w.mean())) < 1e-12

    def test_on_torus_matches_composition(self, grid):
        triple = build_mikado(0, 1.0, 2, 2.0, 2, grid)
        theta, _, _ = triple.on_torus(grid)
        index = (2 * np.arange(32)) % 32
        assert_allclose(theta, triple.theta[np.ix_(index, index)])

    def test_arrays_are_frozen(self, grid):
        triple = build_mikado(0, 2.0, 1, 2.0, 2, grid)
        with pytest.raises(ValueError):
            triple.theta[0, 0] = 1.0

    def test_nyquist_guard(self, grid):
        with pytest.raises(NyquistError):
            build_mikado(0, 3.0, 2, 2.0, 2, grid)

    def test_rejects_bad_direction(self, grid):
        with pytest.raises(ValueError):
            build_mikado(2, 2.0, 1, 2.0, 2, grid)


class TestMikadoScaling:
    """Predicted exponents and the report's input checks."""

    def test_predicted_sigma_slope_is_derivative_order(self):
        assert predicted_mikado_slope("theta", "sigma", 2, 1.0, 1.5, 2) == 2.0

    def test_predicted_mu_slope_matches_concentration(self):
        # ‖Θ‖_{L^p} is μ-independent; ‖W‖_{L^1} decays like μ^{−1/p}
        assert predicted_mikado_slope("theta", "mu", 0, 2.0, 2.0, 2) == pytest.approx(0.0)
        assert predicted_mikado_slope("w", "mu", 0, 1.0, 2.0, 2) == pytest.approx(-0.5)
        assert predicted_mikado_slope("omega", "mu", 0, 2.0, 2.0, 2) == pytest.approx(-1.0)

    def test_under_resolved_sweep_rejected(self):
        grid = Grid(d=2, n_x=32, n_t=17)
        family = [build_mikado(0, mu, 1, 2.0, 2, grid) for mu in (1.0, 2.0, 3.0)]
        with pytest.raises(ValueError, match="under-resolved"):
            mikado_scaling_report(family, [2.0], [0], grid)

    def test_sweep_must_vary_one_parameter(self):
        grid = Grid(d=2, n_x=32, n_t=17)
        family = [build_mikado(0, 1.0, 1, 2.0, 2, grid) for _ in range(4)]
        with pytest.raises(ValueError, match="exactly one"):
            mikado_scaling_report(family, [2.0], [0], grid)

    def test_sigma_sweep_recovers_derivative_order(self):
        grid = Grid(d=2, n_x=128, n_t=17)
        family = [build_mikado(0, 1.0, sigma, 2.0, 2, grid) for sigma in (1, 2, 3, 4)]
        report = mikado_scaling_report(family, [2.0], [0, 1], grid)
        theta = report[report["family"] == "theta"].set_index("m")
        assert theta.loc[0, "fitted_slope"] == pytest.approx(0.0, abs=0.05)
        assert theta.loc[1, "fitted_slope"] == pytest.approx(1.0, abs=0.05)


class TestTemporal:
    """Normalization, time separation of directions and the corrector profile."""

    @pytest.fixture
    def family(self):
        return build_temporal_family(4.0, 2, 2.0, Grid(d=2, n_x=16, n_t=129))

    def test_product_integrates_to_one(self, family):
        for triple in family:
            assert float(trapezoid(triple.g_bar * triple.g_tilde, triple.times)) == pytest.approx(1.0, abs=1e-8)

    def test_g_bar_has_zero_mean(self, family):
        for triple in family:
            assert abs(float(trapezoid(triple.g_bar, triple.times))) < 1e-8

    def test_distinct_directions_are_disjoint(self, family):
        first, second = family
        assert np.max(np.abs(first.g_bar * second.g_tilde)) == 0.0

    def test_corrector_profile_bounded(self, family):
        for triple in family:
            assert np.max(np.abs(triple.h)) <= 1.0
            assert triple.h[0] == 0.0

    def test_corrector_derivative_matches_oscillation(self):
        triple = build_temporal(0, 4.0, 2, 2.0, 513, 2)
        dt = triple.times[1] - triple.times[0]
        slope = np.gradient(triple.h, dt)
        expected = triple.lam * (triple.g_bar * triple.g_tilde - 1.0)
        assert np.max(np.abs(slope - expected)[5:-5]) < 0.05 * np.max(np.abs(expected))

    def test_unit_profile_repeats_at_period_one_over_lambda(self, family):
        # λt_k = k/64 on this grid, so sample k is the (k mod 64)-th unit sample
        for triple in family:
            for which in ("g_bar", "g_tilde"):
                unit = triple.unit_profile(which, 64)
                assert_allclose(unit[np.arange(129) % 64], getattr(triple, which), rtol=1e-12, atol=1e-14)

    def test_kappa_below_two_d_is_widened(self):
        triple = build_temporal(0, 1.0, 2, 2.0, 129, 2)
        assert triple.kappa_eff == 4.0

    def test_temporal_guard(self):
        with pytest.raises(NyquistError):
            build_temporal(0, 16.0, 2, 2.0, 129, 2)

    def test_analytic_derivative_agrees_with_samples(self):
        triple = build_temporal(0, 4.0, 2, 2.0, 513, 2)
        dt = triple.times[1] - triple.times[0]
        numeric = np.gradient(triple.g_tilde, dt)
        analytic = triple.derivative("g_tilde", 1)
        assert np.max(np.abs(numeric - analytic)) < 0.05 * np.max(np.abs(analytic))


class TestTemporalScaling:
    def test_predicted_slope(self):
        assert predicted_temporal_slope("g_bar", 0, 1.0, 2.0) == pytest.approx(-0.5)
        assert predicted_temporal_slope("g_tilde", 1, 2.0, 4.0) == pytest.approx(0.75)

    def test_needs_distinct_kappas(self):
        family = [build_temporal(0, 4.0, 2, 2.0, 257, 2) for _ in range(4)]
        with pytest.raises(ValueError, match="sweep κ"):
            temporal_scaling_report(family, [1.0], [0])

    def test_l1_sweep_follows_prediction(self):
        family = [build_temporal(0, kappa, 2, 2.0, 513, 2) for kappa in (4.0, 6.0, 8.0, 12.0)]
        report = temporal_scaling_report(family, [1.0, 2.0], [0])
        gap = (report["fitted_slope"] - report["predicted_slope"]).abs().max()
        assert gap < 0.05
