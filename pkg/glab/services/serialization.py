"""Run artifacts: report.json, summary.md and tidy CSV tables."""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Iterable, Sequence

import jinja2
import numpy as np

from glab.schemas import RunReport
from glab.services.approximation import ApproxReport
from glab.services.cascade import SolutionTriplePaths
from glab.services.gpde import GridSolution
from glab.services.scenarios import PathBundle

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"


def fmt(value) -> str:
    """Compact number formatting for the summary."""
    if isinstance(value, bool) or value is None:
        return str(value)
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return str(value)
        return f"{value:.6g}"
    return str(value)


def _environment() -> jinja2.Environment:
    env = jinja2.Environment(
        loader=jinja2.FileSystemLoader(TEMPLATE_DIR),
        keep_trailing_newline=True,
        trim_blocks=True,
        lstrip_blocks=True,
    )
    env.filters["fmt"] = fmt
    return env


def render_summary(report: RunReport, strict: bool = False) -> str:
    template = _environment().get_template("summary.md.j2")
    return template.render(report=report, exit_code=report.exit_code(strict), strict=strict)


def write_report(report: RunReport, out_dir: Path, strict: bool = False) -> Path:
    """report.json (sorted keys, no timestamps) and summary.md; returns the report path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in ("report.json", "summary.md"):
        if name not in report.artifacts:
            report.artifacts.append(name)
    report.artifacts.sort()
    payload = json.loads(report.model_dump_json())
    path = out_dir / "report.json"
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")
    with open(out_dir / "summary.md", "w", encoding="utf-8") as f:
        f.write(render_summary(report, strict))
    logger.info("wrote %s", path)
    return path


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_cell(v) for v in row])
    return path


def fmt_cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return "" if value is None else str(value)


def write_paths_csv(paths: SolutionTriplePaths, path: Path) -> Path:
    """One row per (scenario, t): scenario,t,B,qv,Y,Z,K."""

    def rows():
        for block in paths.blocks:
            bundle = block.bundle
            for i, sid in enumerate(bundle.scenario_ids):
                for j, t in enumerate(bundle.times):
                    yield sid, t, bundle.B[i, j], bundle.qv[j], block.Y[i, j], block.Z[i, j], block.K[i, j]

    return _write_rows(path, ("scenario", "t", "B", "qv", "Y", "Z", "K"), rows())


def write_scenarios_csv(bundles: Sequence[PathBundle], path: Path) -> Path:
    def rows():
        for bundle in bundles:
            for i, sid in enumerate(bundle.scenario_ids):
                for j, t in enumerate(bundle.times):
                    yield sid, t, bundle.B[i, j], bundle.qv[j]

    return _write_rows(path, ("scenario", "t", "B", "qv"), rows())


def write_grid_solution(sol: GridSolution, out_dir: Path, stem: str) -> list[Path]:
    """``stem``.json header plus ``stem``.csv with one row per (t, params, x)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    header = {
        "label": sol.label,
        "t_a": sol.t_a,
        "t_b": sol.t_b,
        "times": [float(t) for t in sol.times],
        "grid": {"x_min": sol.grid.x_min, "x_max": sol.grid.x_max, "m": sol.grid.m},
        "param_axes": [[float(v) for v in axis] for axis in sol.param_axes],
        "columns": ["t", *[f"p{i + 1}" for i in range(len(sol.param_axes))], "x", "u", "du", "d2u"],
    }
    json_path = out_dir / f"{stem}.json"
    with open(json_path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, indent=2, sort_keys=True) + "\n")

    nodes = sol.grid.nodes
    param_points = list(np.ndindex(*sol.param_shape)) if sol.param_axes else [()]

    def rows():
        for ti, t in enumerate(sol.times):
            for idx in param_points:
                params = [sol.param_axes[a][i] for a, i in enumerate(idx)]
                sel = (*idx, ti)
                for xi, x in enumerate(nodes):
                    yield (t, *params, x, sol.u[sel + (xi,)], sol.du[sel + (xi,)], sol.d2u[sel + (xi,)])

    csv_path = _write_rows(out_dir / f"{stem}.csv", header["columns"], rows())
    return [json_path, csv_path]


def write_levels_csv(report: ApproxReport, path: Path) -> Path:
    columns = (
        "level",
        "n_intervals",
        "mode",
        "y0",
        "sup_gap",
        "z_gap",
        "embedding_error",
        "embedding_stderr",
        "oscillation_bound",
        "generator_gap_bound",
        "tx_nodes_per_axis",
    )
    return _write_rows(path, columns, ([getattr(lv, c) for c in columns] for lv in report.levels))


def write_table_csv(records: Sequence[dict], path: Path) -> Path:
    """Tidy table from a list of flat dicts; columns in first-seen order."""
    columns: list[str] = []
    for rec in records:
        columns += [k for k in rec if k not in columns]
    return _write_rows(path, columns, ([rec.get(c) for c in columns] for rec in records))
