"""Tests for the perturbation, the new defect and the step verifications."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from errors import ResolutionError
from parameter_planner import ParameterSet
from perturbation_engine import (
    DiffusionOperator,
    build_perturbation,
    c_norm,
    cde_residual,
    diffusion_defect,
    diffusion_identity_error,
    lemma_norm_table,
    lemma_scaling_report,
    mean_test_battery,
    perturbation_step,
    prepare_step,
    product_cancellation_error,
    temporal_decoupling,
    verify_cde,
    verify_prop31,
)
from spectral_core import (
    Grid,
    SpaceTimeField,
    anti_divergence,
    l1_norm,
    spectral_divergence,
)

from conftest import CASE_A_AMPLITUDE


class TestPrepareStep:
    """Ingredients for the constant defect under zero velocity."""

    def test_margin_and_active_directions(self, case_a_context):
        assert case_a_context.cutoffs.r == pytest.approx(0.125)
        assert case_a_context.coeffs.active == (True, False)
        assert case_a_context.atlas.n_charts == 2

    def test_rejects_mismatched_grids(self, case_a_triple, case_a_params):
        rho, u, R = case_a_triple
        other = SpaceTimeField.zeros(Grid(d=2, n_x=16, n_t=65))
        with pytest.raises(ValueError):
            prepare_step(other, u, R, case_a_params, 0.16)


class TestPerturbation:
    """Structural identities of θ and w."""

    def test_theta_has_zero_spatial_mean(self, case_a_step):
        assert np.max(np.abs(case_a_step.bundle.theta.spatial_mean())) < 1e-10

    def test_w_is_divergence_free(self, case_a_step):
        w = case_a_step.bundle.w
        scale = max(1.0, float(np.max(np.abs(w.values))))
        assert case_a_step.bundle.divergence_error() <= 1e-6 * scale

    def test_perturbation_vanishes_outside_half_margin(self, case_a_step, case_a_context):
        grid = case_a_context.grid
        times = grid.times()
        half = 0.5 * case_a_context.cutoffs.r
        outside = (times < half) | (times > 1.0 - half)
        assert np.all(case_a_step.bundle.theta.values[outside] == 0.0)
        assert np.all(case_a_step.bundle.w.values[outside] == 0.0)

    def test_oscillation_corrector_vanishes_for_constant_defect(self, case_a_step):
        assert_allclose(case_a_step.bundle.theta_o.values, 0.0, atol=1e-14)

    def test_rejects_nonpositive_eta(self, case_a_context):
        ctx = case_a_context
        with pytest.raises(ValueError):
            build_perturbation(ctx.rho, ctx.u, ctx.R, ctx.atlas, ctx.cutoffs, ctx.coeffs, ctx.blocks, 0.0)

    def test_product_cancellation_on_single_chart(self, case_a_triple, case_a_params):
        rho, u, R = case_a_triple
        params = case_a_params.model_copy(update={"nu": 1.0})
        ctx = prepare_step(rho, u, R, params, 16.0 * CASE_A_AMPLITUDE)
        result = perturbation_step(ctx, eta=0.5)
        error = product_cancellation_error(result.bundle, ctx.atlas, ctx.cutoffs, ctx.blocks)
        assert error < 1e-10

    def test_time_decoupling_of_one_active_direction(self, case_a_context):
        table = temporal_decoupling(case_a_context)
        assert list(table["direction"]) == [0]
        row = table.iloc[0]
        assert 0.0 < row["lhs"] <= row["product_term"] + row["oscillation_term"]
        assert 0.0 < row["ratio"] < 1.0

    def test_cancellation_needs_single_chart(self, case_a_step, case_a_context):
        with pytest.raises(ValueError):
            product_cancellation_error(
                case_a_step.bundle, case_a_context.atlas, case_a_context.cutoffs, case_a_context.blocks
            )


class TestDefectDecomposition:
    """R¹ as the sum of its named parts."""

    def test_total_is_sum_of_components(self, case_a_step):
        parts = case_a_step.decomposition.components()
        total = sum(f.values for f in parts.values())
        assert_allclose(case_a_step.R.values, total, atol=1e-14)

    def test_l1_norms_cover_every_component(self, case_a_step):
        norms = case_a_step.decomposition.l1_norms()
        assert set(norms) == {
            "R_lin", "R_cor", "R_trans1", "R_trans2", "R_osc_x", "R_osc_t",
            "R_rem", "R_flow", "R_interact", "R_trans",
        }
        assert all(v >= 0.0 for v in norms.values())

    def test_remainder_vanishes_on_interior_interval(self, case_a_step, case_a_context):
        times = case_a_context.grid.times()
        r = case_a_context.cutoffs.r
        inside = (times >= r) & (times <= 1.0 - r)
        assert_allclose(case_a_step.decomposition.R_rem.values[inside], 0.0, atol=1e-15)

    def test_linear_term_vanishes_for_zero_background(self, case_a_step):
        assert_allclose(case_a_step.decomposition.R_lin.values, 0.0)

    def test_no_diffusion_term_without_operator(self, case_a_step):
        assert case_a_step.decomposition.R_diffusion is None


class TestCde:
    """The continuity-defect residual and its floors."""

    def test_new_triple_closes(self, case_a_step, case_a_triple):
        report = verify_cde(case_a_step.rho, case_a_step.u, case_a_step.R, *case_a_triple)
        assert report.input_residual_l1 < 1e-12
        assert report.residual_l1 <= report.unreachable_floor + 1e-10
        assert report.relative_to_scale < 1e-8

    def test_exact_transport_sits_at_time_floor(self):
        grid = Grid(d=2, n_x=16, n_t=129)
        c = 0.5
        rho = SpaceTimeField.from_function(grid, lambda t, x, y: np.sin(2 * np.pi * (x - c * t)) + 0 * y)
        u = SpaceTimeField(grid, np.stack([np.full(grid.scalar_shape, c), np.zeros(grid.scalar_shape)], axis=-1))
        report = verify_cde(rho, u, SpaceTimeField.zeros(grid, "vector"))
        assert report.residual_l1 <= 4.0 * (report.time_floor + report.alias_floor) + 1e-13
        assert report.reference_l1 is None

    def test_diffusion_form(self):
        grid = Grid(d=2, n_x=16, n_t=17)
        operator = DiffusionOperator.minus_laplacian(2)
        rho = SpaceTimeField.from_function(grid, lambda t, x, y: np.sin(2 * np.pi * x) + 0 * t + 0 * y)
        R = anti_divergence(SpaceTimeField(grid, operator.apply(rho.values, 2)))
        residual = cde_residual(rho, SpaceTimeField.zeros(grid, "vector"), R, operator)
        assert np.max(np.abs(residual)) < 1e-10


SHEAR = 0.2
SLOPE = 0.05
# δ/(16d) spans 2.4 cells where |∇R_j| = SLOPE peaks on 32 cells
SHEAR_DELTA = 2.4 * SLOPE


def sheared_triple(grid: Grid):
    """ρ = 1 + SLOPE·t·sin 2πy under u = (SHEAR·sin 2πy, 0), with the defect that closes it exactly."""
    rho = SpaceTimeField.from_function(grid, lambda t, x, y: 1.0 + SLOPE * t * np.sin(2 * np.pi * y) + 0 * x)
    u = SpaceTimeField.from_function(
        grid, lambda t, x, y: [SHEAR * np.sin(2 * np.pi * y) + 0 * t + 0 * x, 0 * t + 0 * x + 0 * y], rank="vector"
    )
    wave = SLOPE / (2 * np.pi)
    R = SpaceTimeField.from_function(
        grid,
        lambda t, x, y: [wave * np.cos(2 * np.pi * y) + 0 * t + 0 * x, -wave * np.cos(2 * np.pi * y) + 0 * t + 0 * x],
        rank="vector",
    )
    return rho, u, R


class TestShearedStep:
    """A spatially varying defect carried by a moving flow."""

    @pytest.fixture
    def triple(self, grid32):
        return sheared_triple(grid32)

    @pytest.fixture
    def context(self, triple, case_a_params):
        return prepare_step(*triple, case_a_params, SHEAR_DELTA)

    @pytest.fixture
    def step(self, context):
        return perturbation_step(context, eta=1.0)

    def test_both_directions_active_on_moving_charts(self, context):
        assert context.coeffs.active == (True, True)
        assert context.cutoffs.spatial_band_cells == pytest.approx(2.4)
        assert context.atlas.flow_closeness > 0.0

    def test_input_closes(self, triple):
        report = verify_cde(*triple)
        assert report.residual_l1 < 1e-12

    def test_residual_stays_at_its_floors(self, step, triple):
        report = verify_cde(step.rho, step.u, step.R, *triple)
        assert report.reference_l1 == pytest.approx(SLOPE * 2.0 / np.pi, rel=1e-2)
        bound = report.input_residual_l1 + report.unreachable_floor + 1e-8 * report.reference_l1
        assert report.residual_l1 <= bound
        assert report.relative <= bound / report.reference_l1

    def test_remainder_and_flow_terms_within_quarter_delta(self, step):
        norms = step.decomposition.l1_norms()
        assert norms["R_rem"] <= SHEAR_DELTA / 4
        assert 0.0 < norms["R_flow"] <= SHEAR_DELTA / 4

    def test_gaps_are_reported_apart_from_components(self, step):
        decomposition = step.decomposition
        assert math.isfinite(decomposition.transport_gap) and decomposition.transport_gap >= 0.0
        assert math.isfinite(decomposition.oscillation_gap) and decomposition.oscillation_gap >= 0.0
        assert "transport_gap" not in decomposition.components()

    def test_time_decoupling_covers_both_directions(self, context):
        table = temporal_decoupling(context)
        assert list(table["direction"]) == [0, 1]
        assert (table["lhs"] > 0.0).all()
        assert (table["lhs"] <= table["product_term"] + table["oscillation_term"]).all()

    def test_thin_value_band_is_rejected(self, triple, case_a_params):
        with pytest.raises(ResolutionError):
            prepare_step(*triple, case_a_params, SHEAR_DELTA / 2)


class TestStepInequalities:
    """The five step inequalities and the implied constant."""

    @pytest.fixture
    def report(self, case_a_step, case_a_triple, case_a_params, case_a_context):
        new = (case_a_step.rho, case_a_step.u, case_a_step.R)
        return verify_prop31(case_a_triple, new, case_a_params, 1.0, case_a_context.delta, case_a_context.cutoffs.r)

    def test_calibration_leaves_constant_bounds_unjudged(self, report):
        assert set(report.checks) == {"sobolev", "defect", "mean_test", "support"}
        assert report.not_judged == ("density", "field")
        assert report.M_used is None
        assert report.measured_M == pytest.approx(max(report.implied_M_density, report.implied_M_field))

    def test_planned_constant_is_judged(self, report, case_a_step, case_a_triple, case_a_params, case_a_context):
        new = (case_a_step.rho, case_a_step.u, case_a_step.R)
        planned = verify_prop31(
            case_a_triple, new, case_a_params, 1.0, case_a_context.delta, case_a_context.cutoffs.r,
            M=2.0 * report.measured_M,
        )
        assert set(planned.checks) == {"density", "field", "sobolev", "defect", "mean_test", "support"}
        assert planned.not_judged == ()
        assert planned.checks["density"] and planned.checks["field"]

    def test_support(self, report):
        assert report.checks["support"]
        assert report.support_leak == 0.0
        assert report.support_radius == pytest.approx(0.0625)

    def test_defect_before_is_constant_norm(self, report):
        assert report.defect_l1_before == pytest.approx(CASE_A_AMPLITUDE)

    def test_small_constant_fails_bounds(self, case_a_step, case_a_triple, case_a_params, case_a_context):
        new = (case_a_step.rho, case_a_step.u, case_a_step.R)
        report = verify_prop31(
            case_a_triple, new, case_a_params, 1.0, case_a_context.delta, case_a_context.cutoffs.r, M=1e-6
        )
        assert not report.checks["density"]
        assert not report.all_passed


class TestMeanTestBattery:
    def test_twenty_named_functions(self, grid16):
        battery = mean_test_battery(grid16)
        assert len(battery) == 20
        assert battery[0][0] == "one"
        assert len({name for name, _ in battery}) == 20

    def test_deterministic(self, grid16):
        first = mean_test_battery(grid16)[-1][1]
        second = mean_test_battery(grid16)[-1][1]
        assert_allclose(first, second)

    def test_c_norm(self, grid16):
        assert c_norm(np.ones((16, 16)), 2, 3) == pytest.approx(1.0)
        x, _ = grid16.coordinates()
        assert c_norm(np.sin(2 * np.pi * x), 2, 1) == pytest.approx(1.0 + 2 * np.pi)


class TestDiffusionOperator:
    """Constant-coefficient operators of order k."""

    def test_minus_laplacian_on_sine(self, grid16):
        x, _ = grid16.coordinates()
        out = DiffusionOperator.minus_laplacian(2).apply(np.sin(2 * np.pi * x), 2)
        assert_allclose(out, 4 * np.pi**2 * np.sin(2 * np.pi * x), atol=1e-9)

    def test_rejects_zero_multi_index(self):
        with pytest.raises(ValidationError):
            DiffusionOperator(k=2, coefficients={(0, 0): 1.0})

    def test_rejects_order_above_k(self):
        operator = DiffusionOperator(k=2, coefficients={(3, 0): 1.0})
        with pytest.raises(ValueError):
            operator.symbol(16, 2)

    def test_vector_application(self, grid16):
        x, y = grid16.coordinates()
        vec = np.stack([np.sin(2 * np.pi * x), np.cos(2 * np.pi * y)], axis=-1)
        out = DiffusionOperator.minus_laplacian(2).apply(vec, 2, vector=True)
        assert_allclose(out, 4 * np.pi**2 * vec, atol=1e-9)


class TestDiffusionDefect:
    """div R_diffusion = L_kθ."""

    def test_identity(self, case_a_step, case_a_context):
        operator = DiffusionOperator.minus_laplacian(2)
        ctx = case_a_context
        R_diffusion = diffusion_defect(case_a_step.bundle, ctx.coeffs, ctx.cutoffs, ctx.atlas, ctx.blocks, operator)
        assert diffusion_identity_error(R_diffusion, case_a_step.bundle.theta, operator) <= 1e-4

    def test_step_with_operator_adds_component(self, case_a_context):
        result = perturbation_step(case_a_context, 1.0, DiffusionOperator.minus_laplacian(2))
        assert result.decomposition.R_diffusion is not None
        assert "R_diffusion" in result.decomposition.l1_norms()

    def test_divergence_matches_operator(self, case_a_context):
        operator = DiffusionOperator.minus_laplacian(2)
        result = perturbation_step(case_a_context, 1.0, operator)
        div = spectral_divergence(result.decomposition.R_diffusion.values, 2)
        target = operator.apply(result.bundle.theta.values, 2)
        assert np.max(np.abs(div - target)) <= 1e-6 * max(1.0, float(np.max(np.abs(target))))


class TestEstimateTable:
    """Measured norms next to their predicted parameter combinations."""

    def test_columns_and_rows(self, case_a_step, case_a_params, case_a_context):
        table = lemma_norm_table(
            case_a_step.bundle, case_a_step.decomposition, case_a_params,
            case_a_context.delta, l1_norm(case_a_context.R),
        )
        assert list(table.columns) == [
            "estimate", "norm_kind", "measured", "predicted", "ratio", "expression",
            "exp_mu", "exp_sigma", "exp_kappa", "exp_lam",
        ]
        assert {"theta_p", "w_p", "R_interact", "R_trans"} <= set(table["estimate"])
        assert (table["predicted"] > 0).all()

    def test_interaction_predicted_like_inverse_root_lambda(self, case_a_step, case_a_params, case_a_context):
        table = lemma_norm_table(
            case_a_step.bundle, case_a_step.decomposition, case_a_params,
            case_a_context.delta, l1_norm(case_a_context.R),
        ).set_index("estimate")
        assert table.loc["R_interact", "predicted"] == pytest.approx(case_a_params.lam ** -0.5)
        assert table.loc["R_interact", "exp_lam"] == -0.5

    def test_scaling_report_needs_three_tables(self):
        with pytest.raises(ValueError):
            lemma_scaling_report([], [1.0, 2.0], "mu")
        with pytest.raises(ValueError):
            lemma_scaling_report([], [1.0, 2.0, 3.0], "nu")


class TestLambdaSweep:
    """Oscillation corrector and chart interaction against λ at fixed κ."""

    LAMBDAS = (4, 16, 64)

    @pytest.fixture(scope="class")
    def slopes(self):
        # λκ = 256 at the top of the sweep needs n_t − 1 = 2048
        grid = Grid(d=2, n_x=16, n_t=2049)
        rho = SpaceTimeField.zeros(grid)
        u = SpaceTimeField.zeros(grid, "vector")
        R = SpaceTimeField.from_function(
            grid,
            lambda t, x, y: [0.01 * (1.5 + 0.5 * np.cos(2 * np.pi * x)) + 0 * t + 0 * y, 0 * t + 0 * x + 0 * y],
            rank="vector",
        )
        delta = 0.16
        tables = []
        for lam in self.LAMBDAS:
            params = ParameterSet(
                d=2, s=2.0, p=2.0, s_tilde=1.0, p_tilde=1.0,
                alpha=1.0, beta=1.0, gamma=0.5,
                mu=1.0, sigma=1, lam=lam, kappa=4.0, nu=0.5, N=2,
            )
            step = perturbation_step(prepare_step(rho, u, R, params, delta), eta=1.0)
            tables.append(lemma_norm_table(step.bundle, step.decomposition, params, delta, l1_norm(R)))
        return lemma_scaling_report(tables, list(self.LAMBDAS), "lam").set_index("estimate")

    def test_oscillation_corrector_decays_like_inverse_lambda(self, slopes):
        assert slopes.loc["theta_o", "predicted_slope"] == -1.0
        assert slopes.loc["theta_o", "fitted_slope"] <= -0.9

    def test_interaction_decays_like_inverse_root_lambda(self, slopes):
        assert slopes.loc["R_interact", "predicted_slope"] == -0.5
        assert slopes.loc["R_interact", "fitted_slope"] <= -0.4


def test_eta_balances_density_and_field(case_a_context):
    """Doubling η doubles θ_p and halves w_p."""
    one = perturbation_step(case_a_context, 1.0).bundle
    two = perturbation_step(case_a_context, 2.0).bundle
    assert_allclose(two.theta_p.values, 2.0 * one.theta_p.values, atol=1e-14)
    assert_allclose(two.w_p.values, 0.5 * one.w_p.values, atol=1e-14)
    assert math.isclose(two.eta, 2.0)
