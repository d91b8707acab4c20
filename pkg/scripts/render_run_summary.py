#!/usr/bin/env python3
"""
Render a Markdown Summary from a Run Report

This script reads a report.json written by citl-engine and generates a Markdown
summary: the run header, a table of gated checks, a step table and a Mermaid
xychart of how the defect shrinks along the μ-ladder.

Usage:
    python scripts/render_run_summary.py <run_dir>/report.json

The summary is saved next to the report as summary.md unless -o is given.
"""

import argparse
import json
from pathlib import Path
from typing import Any, Dict, List


def fmt(value: Any, digits: int = 4) -> str:
    """Format numbers compactly; strings such as "inf" pass through."""
    if isinstance(value, bool):
        return "✓" if value else "✗"
    if isinstance(value, (int, float)):
        return f"{value:.{digits}g}"
    return str(value)


def check_table(checks: Dict[str, bool]) -> List[str]:
    if not checks:
        return ["_No gated checks were recorded._"]
    lines = ["| check | result |", "|---|---|"]
    for name, passed in checks.items():
        lines.append(f"| `{name}` | {fmt(passed)} |")
    return lines


def defect_chart(steps: List[Dict[str, Any]], initial_defect: Any) -> List[str]:
    """Mermaid xychart of the L¹ defect after every step, step 0 being the initial triple."""
    values = [initial_defect] + [event.get("defect_l1_after") for event in steps]
    values = [float(v) for v in values if isinstance(v, (int, float))]
    return [
        "```mermaid",
        "xychart-beta",
        '    title "defect ‖Rⁿ‖ in L¹"',
        f"    x-axis [{', '.join(str(n) for n in range(len(values)))}]",
        '    y-axis "L¹ norm"',
        f"    line [{', '.join(f'{v:.6g}' for v in values)}]",
        "```",
    ]


def step_table(steps: List[Dict[str, Any]]) -> List[str]:
    lines = ["| step | μ | δ | η | charts | ‖R‖ after | accepted |", "|---|---|---|---|---|---|---|"]
    for event in steps:
        lines.append(
            f"| {event['step']} | {fmt(event.get('mu'))} | {fmt(event.get('delta'), 3)} | {fmt(event.get('eta'), 3)} "
            f"| {event.get('charts')} | {fmt(event.get('defect_l1_after'))} | {fmt(bool(event.get('accepted')))} |"
        )
    return lines


def render_summary(report: Dict[str, Any]) -> str:
    """
    Generate the Markdown summary of one run.

    Args:
        report: Parsed report.json

    Returns:
        Markdown document as a string
    """
    summary = report.get("summary", {})
    steps = [e for e in report.get("events", []) if e.get("event_type") == "step"]
    errors = [e for e in report.get("events", []) if e.get("event_type") == "error"]

    lines = [
        "---",
        f"Run ID: {report.get('run_id', 'unknown')}",
        f"Scenario: {report.get('scenario', 'unknown')}",
        f"Start Time: {report.get('start_time', 'unknown')}",
        f"Passed: {report.get('passed', 'unknown')}",
        "---",
        "",
        "## Checks",
        "",
        *check_table(report.get("checks", {})),
    ]

    plan = report.get("plan")
    if plan:
        lines += [
            "",
            "## Exponents",
            "",
            f"α = {fmt(plan.get('alpha'))}, β = {fmt(plan.get('beta'))}, γ = {fmt(plan.get('gamma'))}"
            + (" (α capped)" if plan.get("alpha_capped") else ""),
        ]

    if summary:
        lines += ["", "## Summary", ""]
        for key in ("steps", "initial_defect_l1", "final_defect_l1", "deviation", "eps", "deviation_budget_met", "M"):
            if key in summary:
                lines.append(f"- **{key}**: {fmt(summary[key])}")

    if steps:
        lines += ["", "## Steps", "", *step_table(steps), "", *defect_chart(steps, summary.get("initial_defect_l1"))]

    if report.get("nonuniqueness"):
        lines += ["", "## Profile windows", ""]
        for key, value in report["nonuniqueness"].items():
            lines.append(f"- **{key}**: {fmt(value)}")

    for error in errors:
        lines.append(f"\n> ERROR {error.get('error_type')}: {error.get('message')}")

    return "\n".join(lines) + "\n"


def main():
    """Main entry point for the script."""
    parser = argparse.ArgumentParser(description="Render a Markdown summary from a run report")
    parser.add_argument("report_file", help="Path to report.json")
    parser.add_argument("-o", "--output", help="Output file path (default: summary.md next to the report)")
    args = parser.parse_args()

    report_path = Path(args.report_file)
    if not report_path.exists():
        print(f"Error: Report file not found: {report_path}")
        return 1

    try:
        with open(report_path, "r", encoding="utf-8") as f:
            report = json.load(f)
    except json.JSONDecodeError as e:
        print(f"Error: Invalid JSON in report file: {e}")
        return 1

    output_path = Path(args.output) if args.output else report_path.with_name("summary.md")
    output_path.parent.mkdir(parents=True, exist_ok=True)
    output_path.write_text(render_summary(report), encoding="utf-8")

    print(f"Run summary saved to: {output_path}")
    return 0


if __name__ == "__main__":
    exit(main())
