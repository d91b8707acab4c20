"""Tests for initial data, the schedule, the iteration driver and report emission."""

import json
import math

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from defect_prep import MIN_BAND_CELLS, build_cutoffs, choose_margin
from errors import InitialDataError
from experiment_harness import (
    build_schedule,
    emit_report,
    initial_triple,
    ladder_mu,
    nonuniqueness_scenario,
    precheck_ladder,
    profile_windows,
    ramp_profile,
    ramped_density,
    run_iteration,
    step_delta,
    trig_profile,
    window_average,
)
from parameter_planner import solve_exponents
from run_config import RunConfig
from run_report import NORM_COLUMNS
from spectral_core import (
    SpaceTimeField,
    derivative,
    l1_norm,
    lebesgue_mean,
    spectral_divergence,
)


def _config(**scenario) -> RunConfig:
    return RunConfig().with_overrides(**{f"scenario.{k}": v for k, v in scenario.items()})


class TestInitialData:
    """ρ̃ = χ(t)ρ̄(x) and the defect that starts the iteration."""

    def test_ramp_values(self):
        assert_allclose(ramp_profile(np.array([0.0, 0.125, 0.25, 0.5, 0.75, 1.0])), [0, 0, 1, 1, 1, 0], atol=1e-15)

    def test_trig_profile_is_normalized(self, grid32):
        rho_bar = trig_profile(grid32, [(1, 0), (1, 1)], 1.5, seed=3)
        assert abs(float(rho_bar.mean())) < 1e-12
        assert float(lebesgue_mean(np.abs(rho_bar), 1.5, 2)) == pytest.approx(1.0)

    def test_trig_profile_is_reproducible(self, grid32):
        first = trig_profile(grid32, [(1, 0), (0, 2)], 1.0, seed=7)
        assert_allclose(trig_profile(grid32, [(1, 0), (0, 2)], 1.0, seed=7), first)
        assert not np.allclose(trig_profile(grid32, [(1, 0), (0, 2)], 1.0, seed=8), first)

    def test_ramped_density_starts_at_zero(self, grid32):
        rho = ramped_density(grid32, trig_profile(grid32, [(1, 0)], 1.0))
        assert_allclose(rho.values[0], 0.0)
        assert_allclose(rho.values[-1], 0.0)

    def test_defect_solves_the_continuity_equation(self, grid32):
        rho_tilde = ramped_density(grid32, trig_profile(grid32, [(1, 0), (1, 1)], 1.0))
        rho, u, R = initial_triple(rho_tilde)
        assert_allclose(u.values, 0.0)
        source = derivative(rho_tilde, "t").values
        assert_allclose(spectral_divergence(R.values, 2), source, atol=1e-9)

    def test_time_constant_density_has_no_defect(self, grid16):
        rho_tilde = SpaceTimeField.from_function(grid16, lambda t, x, y: np.sin(2 * np.pi * x) + 0 * t)
        _, _, R = initial_triple(rho_tilde)
        assert l1_norm(R) == pytest.approx(0.0, abs=1e-12)

    def test_mean_drift_rejected(self, grid16):
        rho_tilde = SpaceTimeField.from_function(grid16, lambda t, x, y: t + 0 * x)
        with pytest.raises(InitialDataError):
            initial_triple(rho_tilde)

    def test_vector_density_rejected(self, grid16):
        with pytest.raises(InitialDataError):
            initial_triple(SpaceTimeField.zeros(grid16, "vector"))


class TestSchedule:
    """Σδ_n^{1/2} = 1 and δ_n^{1/p}η_n = εδ_n^{1/2}/(2M)."""

    def test_square_roots_sum_to_one(self):
        schedule = build_schedule(1.0, 2.0, 1.0, 6)
        assert sum(math.sqrt(schedule.delta(n)) for n in range(2, 7)) == pytest.approx(1.0)
        assert all(a / b == pytest.approx(4.0) for a, b in zip(schedule.deltas, schedule.deltas[1:]))

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0])
    def test_eta_relation(self, p):
        eps, M = 0.3, 2.0
        schedule = build_schedule(eps, p, M, 5)
        for n in range(2, 6):
            delta = schedule.delta(n)
            assert delta ** (1.0 / p) * schedule.eta(n) == pytest.approx(eps * math.sqrt(delta) / (2.0 * M))

    def test_eta_constant_for_p_two(self):
        schedule = build_schedule(0.5, 2.0, 1.25, 6)
        assert_allclose(schedule.etas, 0.5 / 2.5)

    def test_first_eta_from_initial_defect(self):
        schedule = build_schedule(1.0, 2.0, 1.0, 4, defect_l1=0.25)
        assert schedule.eta(1) == pytest.approx(1.0)

    def test_first_eta_needs_defect(self):
        with pytest.raises(ValueError):
            build_schedule(1.0, 2.0, 1.0, 4).eta(1)

    def test_horizon_enforced(self):
        schedule = build_schedule(1.0, 2.0, 1.0, 4)
        with pytest.raises(IndexError):
            schedule.delta(5)
        with pytest.raises(IndexError):
            schedule.delta(1)

    def test_telescoping_bound(self):
        schedule = build_schedule(0.4, 1.0, 1.0, 6)
        assert schedule.telescoping_bound(0) == 0.0
        assert schedule.telescoping_bound(1) == pytest.approx(0.2)
        assert schedule.telescoping_bound(6) == pytest.approx(0.4)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            build_schedule(0.0, 1.0, 1.0, 4)
        with pytest.raises(ValueError):
            build_schedule(1.0, 1.0, 1.0, 1)


class TestLadder:
    def test_last_rung_repeats(self):
        assert ladder_mu([2.0, 3.0], 1) == 2.0
        assert ladder_mu([2.0, 3.0], 5) == 3.0

    def test_precheck_without_steps(self, grid32):
        assert precheck_ladder(solve_exponents(2, 2, 1, 4 / 3, 1), [2.0], 0, grid32) == []

    def test_precheck_concretizes_every_step(self, grid32):
        rungs = precheck_ladder(solve_exponents(2, 2, 1, 4 / 3, 1), [2.0, 3.0], 3, grid32)
        assert len(rungs) == 3
        assert all(r.mu == 2.0 for r in rungs)
        assert [r.mu_requested for r in rungs] == [2.0, 3.0, 3.0]

    def test_step_delta_resolves_value_band(self, grid32):
        R = SpaceTimeField.from_function(
            grid32, lambda t, x, y: [0.01 * np.sin(2 * np.pi * x) + 0 * t + 0 * y, 0 * t + 0 * x + 0 * y], rank="vector"
        )
        delta = step_delta(1e-12, R, 1.0)
        # δ/(16d) must cover MIN_BAND_CELLS cells of slope 2π·0.01
        assert delta >= 16.0 * 2 * MIN_BAND_CELLS * 2 * np.pi * 0.01 / 32
        cutoffs = build_cutoffs(R, delta, choose_margin(R, delta), grid32)
        assert cutoffs.spatial_band_cells >= MIN_BAND_CELLS

    def test_step_delta_is_capped_and_floored(self, grid16):
        R = SpaceTimeField(grid16, np.full(grid16.vector_shape, 1e-6))
        assert step_delta(1.0, R, 0.2) == pytest.approx(0.1)
        tiny = step_delta(1e-12, R, 0.2)
        assert 1e-12 < tiny < 0.1


class TestIteration:
    """The driver without steps, and the report it emits."""

    @pytest.fixture
    def idle(self):
        return run_iteration(_config(n_steps=0))

    def test_no_steps_passes_trivially(self, idle):
        assert idle.steps == [] and idle.checks == {}
        assert idle.passed
        assert idle.summary["steps"] == 0
        assert idle.summary["deviation"] == 0.0
        assert idle.summary["final_defect_l1"] == pytest.approx(idle.summary["initial_defect_l1"])
        assert idle.summary["initial_defect_l1"] > 0.0

    def test_report_files(self, idle, tmp_path):
        report = emit_report(idle, tmp_path, "iterate", _config(n_steps=0))
        data = json.loads(report.report_file.read_text(encoding="utf-8"))
        assert data["scenario"] == "iterate"
        assert data["passed"] is True
        assert {"plan", "schedule", "summary", "scaling"} <= set(data)
        norms = pd.read_csv(report.run_dir / "norms.csv")
        assert list(norms.columns) == NORM_COLUMNS
        assert norms.loc[0, "component"] == "R_total"

    @pytest.mark.slow
    def test_single_step_record(self):
        result = run_iteration(_config(n_steps=1))
        assert len(result.steps) == 1
        record = result.steps[0]
        assert record["defect_l1_before"] == pytest.approx(result.summary["initial_defect_l1"])
        assert {"step1.cde", "step1.defect_decrease", "step1.step_inequalities", "telescoping"} <= set(result.checks)
        assert record["M_used"] is None
        assert tuple(record["prop31_report"]["not_judged"]) == ("density", "field")
        assert result.summary["M"] == pytest.approx(2.0 * record["measured_M"])
        assert len(record["time_decoupling"]) >= 1
        assert result.last_step is not None


class TestNonuniqueness:
    def test_window_average_of_constant(self):
        times = np.linspace(0.0, 1.0, 65)
        avg, length = window_average(np.full(65, 0.7), times, [(0.0, 0.25)])
        assert avg == pytest.approx(0.7)
        assert length == pytest.approx(0.25)

    def test_end_window_skips_the_gap(self):
        times = np.linspace(0.0, 1.0, 65)
        # ∫ t over [0, ⅛] ∪ [⅞, 1] is 1/128 + 15/128 on a length of ¼
        avg, length = window_average(times.copy(), times, [(0.0, 0.125), (0.875, 1.0)])
        assert length == pytest.approx(0.25)
        assert avg == pytest.approx(0.5)

    def test_ramp_profile_sits_on_the_bounds(self):
        times = np.linspace(0.0, 1.0, 129)
        s = 2.0
        eps = 0.25 * 0.25 ** (1.0 / s)
        windows = profile_windows(ramp_profile(times), times, 0.0, eps, s)
        assert windows["middle_average"] == pytest.approx(1.0)
        assert windows["end_average"] == pytest.approx(0.0, abs=1e-15)
        assert windows["middle_threshold"] == pytest.approx(0.75)
        assert windows["end_threshold"] == pytest.approx(0.5)

    def test_threshold_arithmetic(self):
        times = np.linspace(0.0, 1.0, 129)
        s = 2.0
        eps = 0.25 * 0.25 ** (1.0 / s)
        windows = profile_windows(ramp_profile(times), times, eps + 0.01, eps, s)
        assert windows["slack"] == pytest.approx(0.01)
        assert windows["middle_threshold"] == pytest.approx(0.75 - 0.01 * np.sqrt(2.0))
        assert windows["end_threshold"] == pytest.approx(0.5 + 0.01 * 2.0)
        # at the budget the middle bound is 1 − ¼·2^{−1/s} and the end bound ¼
        at_budget = profile_windows(ramp_profile(times), times, eps, eps, s)
        assert at_budget["middle_lower_bound"] == pytest.approx(1.0 - 0.25 / np.sqrt(2.0))
        assert at_budget["middle_lower_bound"] > 0.75
        assert at_budget["end_upper_bound"] == pytest.approx(0.25)
        assert at_budget["end_upper_bound"] <= 0.5

    def test_rejects_profile_with_mean(self, grid32):
        rho_bar = trig_profile(grid32, [(1, 0)], 1.0) + 0.1
        with pytest.raises(InitialDataError, match="zero mean"):
            nonuniqueness_scenario(RunConfig(), rho_bar)

    def test_rejects_unnormalized_profile(self, grid32):
        rho_bar = 2.0 * trig_profile(grid32, [(1, 0)], 1.0)
        with pytest.raises(InitialDataError, match="unit"):
            nonuniqueness_scenario(RunConfig(), rho_bar)
