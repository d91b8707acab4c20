"""Tests for the JSON run report and its CSV tables."""

import json
import math

import numpy as np
import pandas as pd

from run_report import NORM_COLUMNS, RunReport


class TestRunReport:
    """Run directories, events and the pass/fail summary."""

    def test_creates_run_directory(self, tmp_path):
        report = RunReport(str(tmp_path), "plan", {"seed": 1})
        assert report.run_dir.parent == tmp_path
        assert report.run_dir.name.startswith("plan_")
        data = json.loads(report.report_file.read_text(encoding="utf-8"))
        assert data["config"] == {"seed": 1}
        assert data["events"] == []

    def test_checks_decide_pass(self, tmp_path):
        report = RunReport(str(tmp_path), "step")
        report.log_check("cde", True)
        assert report.passed
        report.log_check("defect_decrease", False, {"before": 1.0, "after": 2.0})
        assert not report.passed
        report.finalize()
        data = json.loads(report.report_file.read_text(encoding="utf-8"))
        assert data["passed"] is False
        assert data["checks"] == {"cde": True, "defect_decrease": False}
        assert [e["event_type"] for e in data["events"]] == ["check", "check"]

    def test_numpy_and_non_finite_values(self, tmp_path):
        report = RunReport(str(tmp_path), "iterate")
        report.set_section("summary", {"value": np.float64(0.5), "window": (0.0, math.inf), "n": np.int64(3)})
        data = json.loads(report.report_file.read_text(encoding="utf-8"))
        assert data["summary"] == {"value": 0.5, "window": [0.0, "inf"], "n": 3}

    def test_step_events(self, tmp_path):
        report = RunReport(str(tmp_path), "iterate")
        report.log_step(1, {"mu": 2.0, "delta": 0.1})
        report.log_error("CapacityError", "no μ fits")
        events = json.loads(report.report_file.read_text(encoding="utf-8"))["events"]
        assert events[0] == {"event_type": "step", "step": 1, "mu": 2.0, "delta": 0.1}
        assert events[1]["error_type"] == "CapacityError"

    def test_norm_table_schema(self, tmp_path):
        report = RunReport(str(tmp_path), "iterate")
        rows = [
            {"step": 1, "component": "R_trans", "norm_kind": "L¹_tx", "value": 0.1,
             "predicted_scaling": 0.2, "fitted_slope": math.nan},
        ]
        path = report.write_norm_table(rows)
        table = pd.read_csv(path)
        assert list(table.columns) == NORM_COLUMNS
        assert table.loc[0, "component"] == "R_trans"

    def test_empty_norm_table_keeps_header(self, tmp_path):
        path = RunReport(str(tmp_path), "iterate").write_norm_table([])
        assert path.read_text(encoding="utf-8").strip() == ",".join(NORM_COLUMNS)
