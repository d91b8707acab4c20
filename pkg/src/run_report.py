"""
Run Report: records a construction run for analysis and debugging

This module provides a JSON-based report that captures:
- Run metadata (scenario, resolved config, seed)
- Per-step events (parameters, norms, step inequalities, defect residuals)
- Property checks with pass/fail
- Errors

Each run is stored in its own timestamped directory next to its CSV tables.
The CSV tables carry no timestamps, so identical configs give identical CSVs.
"""

import json
import logging
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Sequence
from uuid import uuid4

import numpy as np
import pandas as pd


logger = logging.getLogger(__name__)

NORM_COLUMNS = ["step", "component", "norm_kind", "value", "predicted_scaling", "fitted_slope"]


def _jsonable(value: Any) -> Any:
    """numpy scalars, tuples and non-finite floats in a form json can write."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, Path):
        return str(value)
    return value


class RunReport:
    """
    Manages the report of one CLI run.

    Each report includes:
    - Run metadata (ID, start time, scenario, config)
    - Chronological events (steps, checks, errors)
    - A summary with the gated properties
    """

    def __init__(self, base_path: str = "./runs", scenario: str = "", config: Optional[Dict[str, Any]] = None):
        """
        Initialize a new run report.

        Args:
            base_path: Directory under which the run directory is created
            scenario: CLI subcommand being run
            config: Resolved run configuration
        """
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        unique_id = uuid4().hex[:8]
        self.run_id = f"{timestamp}_{unique_id}"
        self.run_dir = Path(base_path) / f"{scenario or 'run'}_{self.run_id}"
        self.run_dir.mkdir(exist_ok=True, parents=True)

        self.report: Dict[str, Any] = {
            "run_id": self.run_id,
            "start_time": datetime.now().isoformat(),
            "scenario": scenario,
            "config": _jsonable(config or {}),
            "events": [],
            "checks": {},
        }
        self.report_file = self.run_dir / "report.json"

        logger.info(f"[REPORT] Run started: {self.run_id}")
        logger.debug(f"[REPORT] Report file: {self.report_file}")
        self._save()

    def _save(self) -> None:
        """Save the current report to disk."""
        try:
            with open(self.report_file, "w", encoding="utf-8") as f:
                json.dump(self.report, f, indent=2, ensure_ascii=False)
        except OSError as e:
            logger.error(f"[REPORT] Failed to save report file {self.report_file}: {e}")
            raise

    def _add_event(self, event_type: str, **kwargs: Any) -> None:
        event: Dict[str, Any] = {"event_type": event_type}
        event.update(_jsonable(kwargs))
        self.report["events"].append(event)
        self._save()
        logger.debug(f"[REPORT] Event recorded: {event_type}")

    def log_step(self, step: int, record: Dict[str, Any]) -> None:
        self._add_event("step", step=step, **record)

    def log_check(self, name: str, passed: bool, detail: Any = None) -> None:
        """Record a gated property; the run passes only if every check does."""
        self.report["checks"][name] = bool(passed)
        self._add_event("check", name=name, passed=bool(passed), detail=detail)

    def log_error(self, error_type: str, message: str) -> None:
        self._add_event("error", error_type=error_type, message=message)

    def set_section(self, name: str, payload: Any) -> None:
        """Attach a top-level section (summary, plan, scenario results)."""
        self.report[name] = _jsonable(payload)
        self._save()

    def write_table(self, name: str, table: pd.DataFrame) -> Path:
        path = self.run_dir / f"{name}.csv"
        table.to_csv(path, index=False, float_format="%.10g")
        logger.info(f"[REPORT] ✓ Wrote {path.name} ({len(table)} rows)")
        return path

    def write_norm_table(self, rows: Sequence[Dict[str, Any]]) -> Path:
        """The fixed-schema norm table, one row per step per component."""
        return self.write_table("norms", pd.DataFrame(list(rows), columns=NORM_COLUMNS))

    @property
    def passed(self) -> bool:
        return all(self.report["checks"].values())

    def finalize(self) -> str:
        """
        Finalize the run report.

        Returns:
            Path to the report file
        """
        self.report["end_time"] = datetime.now().isoformat()
        self.report["passed"] = self.passed
        self._save()
        logger.info(f"[REPORT] Run finalized: {self.run_id} ({'pass' if self.passed else 'FAIL'})")
        return str(self.report_file)
