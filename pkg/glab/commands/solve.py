import logging
from pathlib import Path

import numpy as np

from glab.commands.common import closed_form_y0, family_of, new_report, partition_of, problem_of
from glab.schemas import ExperimentConfig, ReportSection, RunReport
from glab.services.analysis import apriori_report
from glab.services.cascade import CascadeSolution, SolutionTriplePaths, build_solution_paths, residual_check, solve_cascade
from glab.services.serialization import write_paths_csv

logger = logging.getLogger(__name__)

PATHS_CSV_LIMIT = 2_000_000


def cascade_section(sec: ReportSection, cas: CascadeSolution, config: ExperimentConfig) -> None:
    tol = config.tolerances
    sec.given(
        generator=cas.generator.name,
        terminal=cas.terminal.name,
        mode=cas.mode,
        partition=list(cas.partition.times),
        nodes=cas.grid.m,
    )
    excess = cas.derivative_excess()
    sec.record(
        y0=cas.y0,
        ledger=list(cas.ledger.bounds),
        m_z=cas.ledger.m_z,
        y_bound=cas.y_bound,
        max_abs_u=cas.max_abs_u(),
        derivative_excess=excess,
    )
    if cas.mode == "increments":
        gap = cas.stitching_gap()
        sec.record(stitching_gap=gap)
        sec.tolerance(stitching=tol.cascade_y0)
        sec.check("stitched terminals within interpolation tolerance", gap <= tol.cascade_y0, f"linear vs cubic {gap:.3g}")
    if np.isfinite(cas.ledger.m_z):
        sec.check("|D_x u^k| within the ledger", max(excess) <= 0.0, f"max excess {max(excess):.3g}")
    if cas.max_abs_u() > cas.y_bound:
        sec.warn(f"max|u|={cas.max_abs_u():.4g} exceeds the ceiling {cas.y_bound:.4g}")


def paths_section(sec: ReportSection, paths: SolutionTriplePaths, config: ExperimentConfig, z_slack: float = 0.0) -> None:
    tol = config.tolerances
    viol = paths.k_monotonicity_violation()
    k_T = paths.K[:, -1]
    sec.given(n_paths=paths.n_paths, controls=len(paths.blocks), dt=float(paths.times[1] - paths.times[0]))
    sec.record(
        rejected=paths.rejected,
        k_monotonicity_violation=viol,
        max_abs_z=float(np.max(np.abs(paths.Z))),
        k_terminal_min=float(np.min(k_T)),
        k_terminal_max=float(np.max(k_T)),
        seeds=paths.seeds,
    )
    sec.tolerance(k_monotone=tol.k_monotone)
    sec.check("K nonincreasing on every path", viol <= tol.k_monotone, f"largest upward step {viol:.3g}")
    if np.isfinite(paths.z_bound):
        sec.check("|Z| <= M_z", float(np.max(np.abs(paths.Z))) <= paths.z_bound + z_slack)
    if paths.rejected:
        sec.warn(f"{paths.rejected} paths left the grid and were rejected")


def run(config: ExperimentConfig, out_dir: Path | None = None) -> RunReport:
    """Solve the cascade, build (Y, Z, K) on the scenario family and check residuals and a priori quantities."""
    report = new_report("solve", config)
    tol = config.tolerances
    partition = partition_of(config)
    f, phi = problem_of(config)
    cas = solve_cascade(f, phi, partition, config.band, config.grid)
    cascade_section(report.section("cascade"), cas, config)

    family = family_of(config)
    paths = build_solution_paths(cas, family, on_exit="reject")
    paths_section(report.section("paths"), paths, config, 10 * cas.grid.dx)

    res = residual_check(paths, f, phi, partition)
    sec = report.section("residual")
    sec.record(max=res.max, mean=res.mean, dt=res.dt, nan_paths=len(res.nan_paths))
    if res.nan_paths:
        sec.warn(f"non-finite residuals on {len(res.nan_paths)} paths, first {res.nan_paths[0]}")
    sec.notes.append("residual at the scenario step; see verify for the refinement study")

    ap = apriori_report(
        paths,
        config.analysis.k_moments,
        bounded=phi.is_bounded,
        n_eval_times=config.analysis.bmo_times,
        n_buckets=config.analysis.bmo_buckets,
    )
    sec = report.section("apriori")
    sec.record(
        sup_abs_y=ap.sup_y,
        bmo=ap.bmo.value,
        bmo_argmax=list(ap.bmo.argmax),
        k_moments={f"{p:g}": m.estimate for p, m in ap.k_moments.items()},
        k_moment_stderr={f"{p:g}": m.stderr for p, m in ap.k_moments.items()},
    )
    sec.notes.append(ap.bmo.note)
    sec.check("a priori quantities finite", ap.finite)
    if not phi.is_bounded:
        sec.warn(f"terminal {phi.name} is unbounded; sup|Y| reported without a bound check")

    expected = closed_form_y0(config)
    if expected is not None:
        sec = report.section("closed-form")
        sec.tolerance(y0=tol.cascade_y0)
        sec.record(y0=cas.y0, expected_y0=expected)
        sec.check("Y0 matches the closed form", abs(cas.y0 - expected) <= tol.cascade_y0 * max(1.0, abs(expected)))
    if config.terminal.preset == "affine" and config.generator.preset == "zero":
        sec = report.section("identity")
        flat = float(np.max(np.abs(paths.K)))
        sec.record(max_abs_k=flat)
        sec.check("K flat for a martingale terminal", flat <= tol.k_extreme)
    if config.band.is_degenerate:
        sec = report.section("classical-limit")
        flat = float(np.max(np.abs(paths.K)))
        sec.record(max_abs_k=flat)
        sec.tolerance(k=tol.k_extreme)
        sec.check("K vanishes when the band is degenerate", flat <= tol.k_extreme)

    if out_dir is not None:
        size = paths.n_paths * len(paths.times)
        if size <= PATHS_CSV_LIMIT:
            write_paths_csv(paths, out_dir / "paths.csv")
            report.artifacts.append("paths.csv")
        else:
            report.get("paths").warn(f"paths.csv skipped: {size} rows")
    return report
