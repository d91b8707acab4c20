#!/usr/bin/env python3
"""
citl-engine: convex-integration runs for transport and transport-diffusion

Subcommands:
    plan     exponent feasibility for the configured indices (--atlas for a region CSV)
    blocks   Mikado and temporal scaling fits
    flow     chart geometry for a shear flow
    step     one perturbation step with all step checks
    iterate  the full iteration along the μ-ladder
    demo     the non-uniqueness scenario

Without a subcommand, scenario.kind from the config decides.

Exit codes: 0 pass, 1 property failure, 2 config or capacity error.
"""

import argparse
import json
import logging
import os
import sys
from typing import Optional, Sequence, get_args

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from building_blocks import build_mikado, build_temporal, mikado_scaling_report, temporal_scaling_report
from errors import CapacityError, CitlError
from experiment_harness import emit_report, nonuniqueness_scenario, plan_indices, run_iteration
from flow_geometry import atlas_report, build_atlas, inverse_map_divergence_check
from parameter_planner import concretize, feasibility_atlas
from run_config import RunConfig, Scenario, load_config
from run_report import RunReport
from spectral_core import SpaceTimeField, measure_improved_holder, measure_riemann_lebesgue


# Load environment variables
load_dotenv()

APP_LOGGERS = [
    "__main__", "cli", "spectral_core", "building_blocks", "flow_geometry", "defect_prep",
    "perturbation_engine", "parameter_planner", "experiment_harness", "run_config", "run_report",
    "field_dump",
]
FLOW_TOLERANCE = 1e-4

logger = logging.getLogger(__name__)


def setup_logging(app_log_level: str = "INFO", dependencies_log_level: str = "WARNING", log_file: str | None = None) -> None:
    """Configure logging based on log levels and optional file output.

    Args:
        app_log_level: Log level for the engine modules and __main__
        dependencies_log_level: Log level for all dependency loggers (numpy, scipy, ...)
        log_file: Optional file path for logging output
    """
    app_level = getattr(logging, app_log_level.upper(), logging.INFO)
    dep_level = getattr(logging, dependencies_log_level.upper(), logging.WARNING)

    root_logger = logging.getLogger()
    root_logger.setLevel(dep_level)
    root_logger.handlers.clear()

    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s', datefmt='%H:%M:%S')
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    for handler in handlers:
        handler.setFormatter(formatter)
        root_logger.addHandler(handler)

    for logger_name in APP_LOGGERS:
        logging.getLogger(logger_name).setLevel(app_level)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citl-engine", description=__doc__.splitlines()[1])
    parser.add_argument(
        "command", nargs="?", choices=get_args(Scenario), help="scenario to run (default: scenario.kind from the config)"
    )
    parser.add_argument("--config", help="YAML run config (defaults apply without one)")
    parser.add_argument("--out", help="output directory (overrides output_dir and CITL_OUTPUT_DIR)")
    parser.add_argument("--dump-fields", action="store_true", help="write binary dumps of θ, w and R¹")
    parser.add_argument("--seed", type=int, help="seed for the initial profile phases")
    parser.add_argument("--tol-scale", type=float, help="multiply every gated tolerance")
    parser.add_argument("--atlas", action="store_true", help="plan: also sweep the feasibility atlas")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    out = args.out or (None if args.config else os.getenv("CITL_OUTPUT_DIR"))
    return config.with_overrides(
        **{
            "output_dir": out,
            "scenario.seed": args.seed,
            "tolerances.scale": args.tol_scale,
            "dump_fields": True if args.dump_fields else None,
        }
    )


def print_table(title: str, rows: dict[str, object]) -> None:
    print("\n" + "=" * 70)
    print(title)
    print("=" * 70)
    for key, value in rows.items():
        print(f"  {key:<24} {value}")
    print("=" * 70 + "\n")


# ============================================================
# Subcommands
# ============================================================

def run_plan(config: RunConfig, atlas: bool) -> RunReport:
    indices = config.indices
    report = RunReport(str(config.output_dir), "plan", config.model_dump(mode="json"))
    plan = plan_indices(indices)
    report.set_section("plan", plan.model_dump())
    print(plan.model_dump_json(indent=2))
    rows: dict[str, object] = {"feasible": plan.feasible, "margin": f"{plan.margin:.6g}"}
    if plan.feasible:
        rows.update(
            alpha=f"{plan.alpha:.4g}" + (" (capped)" if plan.alpha_capped else ""),
            beta=f"{plan.beta:.4g}",
            gamma=f"{plan.gamma:.4g}",
            binding=", ".join(plan.binding_constraints[:2]),
        )
        try:
            params = concretize(plan, config.scenario.mu_ladder[0], config.grid_model)
        except CapacityError as e:
            # exponents are still reported
            logger.warning(f"[PLAN] {e}")
            report.log_error("CapacityError", str(e))
            rows["grid"] = f"no μ fits ({e.guard})"
        else:
            report.set_section("parameters", params.model_dump())
            rows.update(sigma=params.sigma, kappa=f"{params.kappa:.4g}", lam=params.lam, N=params.N)
    print_table("Exponent plan", rows)
    report.log_check("feasible", plan.feasible)
    if atlas:
        cfg = config.atlas
        table = feasibility_atlas(indices.d, cfg.s_values, cfg.p_values, cfg.s_tilde_values, cfg.p_tilde_values)
        report.write_table("atlas", table)
    return report


def run_blocks(config: RunConfig) -> RunReport:
    grid = config.grid_model
    scenario = config.scenario
    report = RunReport(str(config.output_dir), "blocks", config.model_dump(mode="json"))
    mikado = [build_mikado(0, mu, 1, config.indices.p, grid.d, grid) for mu in scenario.sweep_mu]
    temporal = [build_temporal(0, kappa, 2, config.indices.s, grid.n_t, grid.d) for kappa in scenario.sweep_kappa]
    table = pd.concat(
        [
            mikado_scaling_report(mikado, [1.0, 2.0], [0, 1], grid),
            temporal_scaling_report(temporal, [1.0, 2.0], [0, 1]),
        ],
        ignore_index=True,
    )
    report.write_table("blocks", table)
    worst = float((table["fitted_slope"] - table["predicted_slope"]).abs().max())
    report.log_check("slopes", worst <= config.tolerances.scaled("slope"), {"worst_gap": worst})
    return report


def run_flow(config: RunConfig) -> RunReport:
    grid = config.grid_model
    scenario = config.scenario
    report = RunReport(str(config.output_dir), "flow", config.model_dump(mode="json"))
    amplitude = scenario.shear_amplitude

    def shear(t: np.ndarray, *x: np.ndarray) -> list[np.ndarray]:
        comps = [amplitude * np.sin(2.0 * np.pi * x[1]) + 0.0 * t]
        return comps + [np.zeros_like(x[0]) + 0.0 * t for _ in range(grid.d - 1)]

    u = SpaceTimeField.from_function(grid, shear, rank="vector")
    plan = plan_indices(config.indices)
    lam = concretize(plan, scenario.mu_ladder[0], grid).lam if plan.feasible else 2
    atlas = build_atlas(u, 1.0 / scenario.charts, lam, grid)
    report.write_table("flow", atlas_report(atlas))

    coords = grid.coordinates()
    G = np.stack([np.sin(2.0 * np.pi * x) for x in coords], axis=-1)
    identity = inverse_map_divergence_check(atlas.charts[0], G, grid) / (2.0 * np.pi * grid.d)
    det = max(c.det_error for c in atlas.charts)
    report.log_check("det_identity", det <= config.tolerances.scale * FLOW_TOLERANCE, {"det_error": det})
    report.log_check("inverse_map_identity", identity <= config.tolerances.scale * FLOW_TOLERANCE, {"residual": identity})

    # slow coefficient against a fast unit-cell wave, composed with the last sample of chart 0
    phi = atlas.charts[0].positions[-1]
    slow = 1.0 + 0.5 * np.sin(2.0 * np.pi * coords[0])
    fast = np.sin(2.0 * np.pi * sum(coords))
    sigmas = [1, 2, 4, 8]
    holder = [measure_improved_holder(slow, fast, sigma, 2.0, grid, phi) for sigma in sigmas]
    report.write_table(
        "decoupling",
        pd.DataFrame(
            {
                "sigma": sigmas,
                "lhs": [m.lhs for m in holder],
                "product_term": [m.product_term for m in holder],
                "oscillation_term": [m.oscillation_term for m in holder],
                "ratio": [m.ratio for m in holder],
            }
        ),
    )
    mean_decay = measure_riemann_lebesgue(slow, fast, grid, sigmas, phi)
    report.set_section(
        "riemann_lebesgue",
        {"sigmas": mean_decay.sigmas, "integrals": mean_decay.integrals, "decay_order": mean_decay.decay_order},
    )
    return report


def run_iterate(config: RunConfig, n_steps: Optional[int] = None, scenario_name: str = "iterate") -> RunReport:
    if n_steps is not None:
        config = config.with_overrides(**{"scenario.n_steps": n_steps})
    result = run_iteration(config)
    report = emit_report(result, config.output_dir, scenario_name, config, config.dump_fields)
    print_table(
        f"{scenario_name}: {result.summary['steps']} steps",
        {
            "‖R¹‖_L¹": f"{result.summary['initial_defect_l1']:.4e}",
            "final ‖R‖_L¹": f"{result.summary['final_defect_l1']:.4e}",
            "deviation": f"{result.summary['deviation']:.4e}",
            "measured M": result.summary["measured_M"],
            "report": report.report_file,
        },
    )
    return report


def run_demo(config: RunConfig) -> RunReport:
    scenario = nonuniqueness_scenario(config)
    report = emit_report(scenario, config.output_dir, "demo", config, config.dump_fields)
    print_table("Non-uniqueness scenario", {k: f"{v:.4g}" for k, v in scenario.windows.items()})
    return report


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging(
        os.getenv("APP_LOG_LEVEL", "INFO"),
        os.getenv("DEPENDENCIES_LOG_LEVEL", "WARNING"),
        os.getenv("LOG_TO_FILE"),
    )
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        command = args.command or config.scenario.kind
        if command == "plan":
            report = run_plan(config, args.atlas)
        elif command == "blocks":
            report = run_blocks(config)
        elif command == "flow":
            report = run_flow(config)
        elif command == "step":
            report = run_iterate(config, n_steps=1, scenario_name="step")
        elif command == "iterate":
            report = run_iterate(config)
        else:
            report = run_demo(config)
    except CitlError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except (OSError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2

    report.finalize()
    failed = [name for name, ok in report.report["checks"].items() if not ok]
    if failed:
        print(f"Property failures: {', '.join(failed)}")
        return 1
    print(json.dumps({"report": str(report.report_file), "passed": True}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
