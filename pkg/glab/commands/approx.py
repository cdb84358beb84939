import logging
from pathlib import Path

from glab.commands.common import family_of, new_report
from glab.schemas import ExperimentConfig, RunReport
from glab.services.approximation import approximation_pipeline
from glab.services.presets import build_path_generator
from glab.services.serialization import write_levels_csv

logger = logging.getLogger(__name__)


def run(config: ExperimentConfig, out_dir: Path | None = None) -> RunReport:
    """Run the dyadic approximation pipeline for the configured path-dependent generator."""
    report = new_report("approx", config)
    ac, tol = config.approx, config.tolerances
    h = build_path_generator(config.path_generator.preset, config.path_generator.params)
    family = family_of(config, dt=ac.fine_dt, paths_per_control=ac.paths_per_control)
    grid_config = config.grid.model_copy(update={"nodes": ac.grid_nodes})

    result = approximation_pipeline(
        h,
        config.terminal.preset,
        config.terminal.params,
        ac.levels,
        config.band,
        config.horizon,
        grid_config,
        family,
        nodes_per_axis=ac.nodes_per_axis,
    )

    sec = report.section("approximation")
    sec.given(
        generator=result.generator,
        terminal=result.terminal,
        levels=ac.levels,
        fine_dt=ac.fine_dt,
        paths_per_control=ac.paths_per_control,
        pde_dt=result.pde_dt,
    )
    sec.record(
        y0=[lv.y0 for lv in result.levels],
        sup_gaps=result.sup_gaps,
        z_gaps=[lv.z_gap for lv in result.levels if lv.z_gap is not None],
        embedding_errors=[lv.embedding_error for lv in result.levels],
        oscillation_bounds=[lv.oscillation_bound for lv in result.levels],
        generator_gap_bounds=[lv.generator_gap_bound for lv in result.levels],
        decay_ratios=result.decay_ratios(),
        decay_targets=result.decay_targets(),
        decay_bands=result.decay_bands(tol.mc_sigmas),
        tx_nodes_per_axis=[lv.tx_nodes_per_axis for lv in result.levels],
    )
    sec.tolerance(gap_slack=tol.gap_slack, mc_sigmas=tol.mc_sigmas)
    sec.check("successive sup-path Y gaps nonincreasing", result.gaps_nonincreasing(tol.gap_slack))
    sec.check(
        "embedding error falls by sqrt(2) per level",
        result.embedding_decays(tol.mc_sigmas),
        ", ".join(
            f"{r:.3f}>={t:.3f}-{b:.3f}"
            for r, t, b in zip(result.decay_ratios(), result.decay_targets(), result.decay_bands(tol.mc_sigmas))
        ),
    )
    sec.check(
        "embedding error below twice the interval oscillation",
        all(lv.embedding_error <= lv.oscillation_bound + 1e-12 for lv in result.levels),
    )
    if float(h.modulus(1.0)) == 0.0:
        sec.tolerance(level_invariance=tol.cascade_y0)
        sec.check("path-independent generator gives level-invariant Y0", result.level_invariant(tol.cascade_y0))
    for note in result.notes:
        sec.warn(note)

    if out_dir is not None:
        write_levels_csv(result, out_dir / "levels.csv")
        report.artifacts.append("levels.csv")
    return report
