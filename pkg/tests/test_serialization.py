import csv
import json
import math

import numpy as np

from glab.models import SpaceGrid
from glab.schemas import RunReport
from glab.services import gpde
from glab.services.presets import build_terminal
from glab.services.serialization import (
    fmt,
    fmt_cell,
    render_summary,
    write_grid_solution,
    write_report,
    write_scenarios_csv,
    write_table_csv,
)


def _report():
    report = RunReport(command="solve", seed=7, config={"b": 1, "a": 2})
    sec = report.section("cascade")
    sec.record(y0=0.3, missing=math.nan, ledger=[1.0, 2.0])
    sec.check("stitching gap", True)
    sec.warn("something odd")
    other = report.section("paths")
    other.check("K nonincreasing", False, "largest upward step 0.1")
    return report


def _rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


class TestReport:
    def test_report_json(self, tmp_path):
        path = write_report(_report(), tmp_path)
        text = path.read_text(encoding="utf-8")
        data = json.loads(text)
        assert list(data) == sorted(data)
        assert data["sections"][0]["estimates"]["missing"] is None
        assert data["artifacts"] == ["report.json", "summary.md"]
        assert text.endswith("}\n")

    def test_rewrite_is_identical(self, tmp_path):
        first = write_report(_report(), tmp_path / "a").read_bytes()
        second = write_report(_report(), tmp_path / "b").read_bytes()
        assert first == second

    def test_summary(self, tmp_path):
        write_report(_report(), tmp_path)
        summary = (tmp_path / "summary.md").read_text(encoding="utf-8")
        assert summary.startswith("# glab solve")
        assert "## cascade" in summary and "## paths" in summary
        assert "- paths: K nonincreasing" in summary
        assert "> warning: something odd" in summary
        assert "| ledger | _see report.json_ |" in summary
        assert "exit status 1" in summary

    def test_strict_summary(self):
        report = RunReport(command="verify", seed=1)
        report.section("a").warn("w")
        assert "exit status 0" in render_summary(report)
        assert "exit status 1 (strict)" in render_summary(report, strict=True)


class TestFormatting:
    def test_fmt(self):
        assert fmt(1 / 3) == "0.333333"
        assert fmt(math.inf) == "inf"
        assert fmt(True) == "True"
        assert fmt(None) == "None"

    def test_cells_keep_full_precision(self):
        assert float(fmt_cell(np.float64(1 / 3))) == 1 / 3
        assert fmt_cell(np.int64(5)) == "5"
        assert fmt_cell(None) == ""


class TestTables:
    def test_scenarios_csv(self, tmp_path, bundles):
        path = write_scenarios_csv(bundles[:2], tmp_path / "scenarios.csv")
        rows = _rows(path)
        assert rows[0] == ["scenario", "t", "B", "qv"]
        assert len(rows) == 1 + 2 * 16 * 65
        assert rows[1][0] == "constant-lo#0"
        assert float(rows[1][2]) == 0.0

    def test_table_columns_in_first_seen_order(self, tmp_path):
        path = write_table_csv([{"a": 1, "b": 2.5}, {"b": 3.0, "c": "x"}], tmp_path / "t.csv")
        assert _rows(path) == [["a", "b", "c"], ["1", "2.5", ""], ["", "3.0", "x"]]

    def test_grid_solution(self, tmp_path, band):
        grid = SpaceGrid.symmetric(2.0, 5)
        sol = gpde.solve_g_heat(build_terminal("quad-convex", 1), band, 0.1, grid, store_steps=2)
        json_path, csv_path = write_grid_solution(sol, tmp_path, "gheat")
        header = json.loads(json_path.read_text(encoding="utf-8"))
        assert header["columns"] == ["t", "x", "u", "du", "d2u"]
        assert header["grid"]["m"] == 5
        rows = _rows(csv_path)
        assert len(rows) == 1 + len(header["times"]) * 5
