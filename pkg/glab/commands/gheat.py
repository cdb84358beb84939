import logging
from pathlib import Path

import numpy as np

from glab.commands.common import new_report
from glab.errors import ConfigurationError
from glab.schemas import ExperimentConfig, RunReport
from glab.services import gpde
from glab.services.presets import build_terminal, g_heat_oracle
from glab.services.serialization import write_grid_solution

logger = logging.getLogger(__name__)


def run(config: ExperimentConfig, out_dir: Path | None = None) -> RunReport:
    """Solve the G-heat equation for the configured one-increment terminal and compare with its closed form."""
    report = new_report("gheat", config)
    band, horizon = config.band, config.horizon
    phi = build_terminal(config.terminal.preset, 1, config.terminal.params)
    grid = config.grid.space_grid(band, horizon)
    sol = gpde.solve_g_heat(
        phi, band, horizon, grid, safety=config.grid.dt_safety, store_steps=config.grid.store_steps
    )

    sec = report.section("gheat")
    sec.given(terminal=phi.name, nodes=grid.m, x_min=grid.x_min, x_max=grid.x_max, horizon=horizon)
    u_T0 = sol.value(horizon, 0.0)
    sec.record(u_T0=u_T0, max_abs_u=float(np.max(np.abs(sol.u))))

    oracle = g_heat_oracle(config.terminal.preset, config.terminal.params, band)
    if oracle is None:
        sec.notes.append(f"no closed form for terminal {phi.name}; value reported only")
    else:
        tol = config.tolerances.classical if band.is_degenerate else config.tolerances.gheat
        sec.tolerance(oracle=tol)
        expected = float(oracle(horizon, 0.0))
        sec.record(oracle_u_T0=expected, error_T0=abs(u_T0 - expected))
        sec.check("u(T, 0) matches closed form", abs(u_T0 - expected) <= tol, f"|{u_T0:.6g} - {expected:.6g}|")
        if config.terminal.preset != "exp-clamped":
            # the boundary condition pollutes the outer part of the grid
            inner = np.abs(grid.nodes) <= grid.x_max / 3
            err = np.abs(sol.final()[..., inner] - oracle(horizon, grid.nodes[inner]))
            sec.record(max_inner_error=float(np.max(err)))
            sec.check("closed form on the inner third of the grid", float(np.max(err)) <= tol)

    if out_dir is not None:
        if sol.u.size > 5_000_000:
            raise ConfigurationError(f"grid solution too large to export ({sol.u.size} values); lower grid.store_steps")
        for path in write_grid_solution(sol, out_dir, "gheat"):
            report.artifacts.append(path.name)
    return report
