"""Backward PDE cascade for discrete G-BSDEs and the solution triple (Y, Z, K) along paths.

Interval k carries u^k(t, x_1, ..., x_k); its terminal condition is the next
interval evaluated at a zero new increment. In running-sum mode generator and
terminal see the increments only through their sum, the history collapses to
w = Σx and each interval is a single one-dimensional equation.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from glab.config import settings
from glab.errors import ConfigurationError, GLabError, GridRangeError, ShapeError
from glab.models import (
    DerivativeLedger,
    GeneratorSpec,
    SpaceGrid,
    TerminalSpec,
    TimePartition,
    VolatilityBand,
)
from glab.schemas import GridConfig
from glab.services import gcore, gpde
from glab.services.scenarios import PathBundle, ScenarioFamily, qv_integral, ito_integral, simulate_family

logger = logging.getLogger(__name__)

CascadeMode = Literal["increments", "running_sum"]


@dataclass(frozen=True)
class CascadeSolution:
    partition: TimePartition
    intervals: tuple[gpde.GridSolution, ...]
    ledger: DerivativeLedger
    band: VolatilityBand
    generator: GeneratorSpec
    terminal: TerminalSpec
    grid: SpaceGrid
    mode: CascadeMode
    z_cap: float | None
    y_bound: float

    @property
    def n_intervals(self) -> int:
        return self.partition.n_intervals

    def interval(self, k: int) -> gpde.GridSolution:
        return self.intervals[k - 1]

    @property
    def y0(self) -> float:
        return self.intervals[0].value(0.0, 0.0)

    def stitching_gap(self) -> float:
        """Interpolation error of the stitched terminals.

        Increments mode tabulates u^{k+1}(t_k, x^(k-1), x_k, 0) on the spatial nodes by
        linear interpolation along the x_k parameter axis. The gap is the largest
        distance of that table from a cubic spline through the same parameter values.
        Running-sum stitching copies values node for node and has no such error.
        """
        if self.mode == "running_sum":
            return 0.0
        worst = 0.0
        for k in range(1, self.n_intervals):
            right = self.interval(k + 1)
            at_zero = gpde.interp_last_axis(right.initial(), right.grid.nodes, 0.0)
            spline = CubicSpline(right.param_axes[-1], at_zero, axis=-1)(self.grid.nodes)
            worst = max(worst, float(np.max(np.abs(self.interval(k).final() - spline))))
        return worst

    def derivative_excess(self) -> list[float]:
        """Per interval: max interior |D_x u^k| − (L^k + 10·dx); nonpositive when the ledger holds."""
        out = []
        for k, sol in enumerate(self.intervals, start=1):
            interior = np.abs(sol.du[..., 1:-1])
            out.append(float(interior.max()) - (self.ledger.bound(k) + 10 * self.grid.dx))
        return out

    def max_abs_u(self) -> float:
        return max(float(np.max(np.abs(sol.u))) for sol in self.intervals)


def _default_mode(f: GeneratorSpec, phi: TerminalSpec) -> CascadeMode:
    return "running_sum" if f.reduction == "sum" and phi.reduction == "sum" else "increments"


def solve_cascade(
    f: GeneratorSpec,
    phi: TerminalSpec,
    partition: TimePartition,
    band: VolatilityBand,
    grid_config: GridConfig,
    *,
    mode: CascadeMode | None = None,
    dt_max: float | None = None,
) -> CascadeSolution:
    """Solve intervals k = N..1 backward, stitching each to the next at x_{k+1} = 0."""
    n = partition.n_intervals
    if f.n_vars != n or phi.n_vars != n:
        raise ShapeError(f"partition has {n} intervals; generator has {f.n_vars}, terminal {phi.n_vars} increments")
    mode = mode or _default_mode(f, phi)
    if mode == "running_sum" and (f.reduction != "sum" or phi.reduction != "sum"):
        raise ConfigurationError("running-sum mode needs a generator and terminal that depend on the sum only")
    if mode == "increments" and n > settings.max_increment_dims:
        raise ConfigurationError(
            f"increments mode supports at most {settings.max_increment_dims} intervals, got {n}"
        )

    horizon = partition.horizon
    grid = grid_config.space_grid(band, horizon)
    axis = gpde.parameter_axis(grid, grid_config.param_nodes)
    ledger = gcore.derivative_bound_ledger(phi.lipschitz, f.l_x, f.l_y, band, partition)
    z_cap = ledger.z_cap()
    driver = f if z_cap is None else gcore.truncate_generator_z(f, z_cap)
    y_bound = gcore.y_ceiling(max(f.m0, phi.bound), f.l_y, band, horizon)
    logger.info(
        "cascade %s / %s: N=%d, mode=%s, grid %d nodes on [%g, %g], M_z=%.4g",
        f.name, phi.name, n, mode, grid.m, grid.x_min, grid.x_max, ledger.m_z,
    )

    solutions: list[gpde.GridSolution] = []
    terminal: TerminalSpec | np.ndarray = phi
    for k in range(n, 0, -1):
        params = () if mode == "running_sum" else (axis,) * (k - 1)
        try:
            sol = gpde.solve_generator_pde(
                driver,
                terminal,
                band,
                (partition.times[k - 1], partition.times[k]),
                grid,
                dt_max,
                param_axes=params,
                safety=grid_config.dt_safety,
                store_steps=grid_config.store_steps,
                label=f"u^{k}",
            )
        except GLabError as e:
            raise e.add_context(f"cascade interval {k}")
        solutions.append(sol)
        if k > 1:
            if mode == "running_sum":
                terminal = sol.initial()
            else:
                try:
                    terminal = gpde.stitch_terminal(sol, grid)
                except GridRangeError as e:
                    raise e.add_context(f"stitching interval {k - 1}")
        logger.info("interval %d solved: max|u|=%.4g", k, float(np.max(np.abs(sol.u))))

    cas = CascadeSolution(
        partition=partition,
        intervals=tuple(reversed(solutions)),
        ledger=ledger,
        band=band,
        generator=f,
        terminal=phi,
        grid=grid,
        mode=mode,
        z_cap=z_cap,
        y_bound=y_bound,
    )
    if math.isfinite(y_bound) and cas.max_abs_u() > y_bound:
        logger.warning("max|u|=%.4g exceeds the ceiling M_y=%.4g", cas.max_abs_u(), y_bound)
    return cas


# ── Paths ───────────────────────────────────────────────


def knot_indices(times: np.ndarray, partition: TimePartition) -> np.ndarray:
    """Grid indices of the partition times; the scenario grid must refine the partition."""
    dt = float(times[1] - times[0])
    idx = np.rint(np.asarray(partition.times) / dt).astype(int)
    if idx[-1] != len(times) - 1 or np.any(np.abs(times[np.clip(idx, 0, len(times) - 1)] - partition.times) > 1e-9):
        raise ConfigurationError(
            f"scenario grid (dt={dt:g}, T={times[-1]:g}) does not refine the partition {partition.times}"
        )
    return idx


def interval_of_index(knots: np.ndarray, n_points: int) -> np.ndarray:
    """Right-continuous interval number k for each grid index (the last point belongs to N)."""
    k = np.searchsorted(knots, np.arange(n_points), side="right")
    return np.clip(k, 1, len(knots) - 1)


def path_states(bundle: PathBundle, partition: TimePartition, mode: CascadeMode) -> np.ndarray:
    """B^k_t as increment vectors (P, n+1, N), right-continuous at the knots.

    Increments mode: (B_{t_1}, ..., B_{t_{k-1}} − B_{t_{k-2}}, B_t − B_{t_{k-1}}, 0, ...).
    Running-sum mode: (B_t, 0, ..., 0).
    """
    n = partition.n_intervals
    B = bundle.B
    states = np.zeros(B.shape + (n,))
    if mode == "running_sum":
        states[..., 0] = B
        return states
    knots = knot_indices(bundle.times, partition)
    ks = interval_of_index(knots, B.shape[1])
    knot_values = B[:, knots]
    increments = np.diff(knot_values, axis=1)
    for j, k in enumerate(ks):
        states[:, j, : k - 1] = increments[:, : k - 1]
        states[:, j, k - 1] = B[:, j] - knot_values[:, k - 1]
    return states


@dataclass(frozen=True)
class TripleBlock:
    """(Y, Z, K) of one bundle; arrays are (P, n+1)."""

    bundle: PathBundle
    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray
    drive: np.ndarray
    rejected: int = 0

    @property
    def label(self) -> str:
        return self.bundle.label


@dataclass(frozen=True)
class SolutionTriplePaths:
    times: np.ndarray
    blocks: tuple[TripleBlock, ...]
    partition: TimePartition
    mode: CascadeMode
    band: VolatilityBand
    y_bound: float
    z_bound: float
    metadata: dict = field(default_factory=dict)

    @property
    def bundles(self) -> list[PathBundle]:
        return [b.bundle for b in self.blocks]

    def stacked(self, name: str) -> np.ndarray:
        return np.concatenate([getattr(b, name) for b in self.blocks], axis=0)

    @property
    def Y(self) -> np.ndarray:
        return self.stacked("Y")

    @property
    def Z(self) -> np.ndarray:
        return self.stacked("Z")

    @property
    def K(self) -> np.ndarray:
        return self.stacked("K")

    @property
    def n_paths(self) -> int:
        return sum(len(b.bundle) for b in self.blocks)

    @property
    def rejected(self) -> int:
        return sum(b.rejected for b in self.blocks)

    @property
    def scenario_ids(self) -> list[str]:
        return [sid for b in self.blocks for sid in b.bundle.scenario_ids]

    @property
    def seeds(self) -> dict[str, int]:
        return {b.label: b.bundle.base_seed for b in self.blocks}

    def k_monotonicity_violation(self) -> float:
        """Largest upward step of K over all paths (0 when K is nonincreasing)."""
        return max(float(np.max(np.diff(b.K, axis=1), initial=0.0)) for b in self.blocks)


def _points_in_grid(cas: CascadeSolution, bundle: PathBundle) -> tuple[np.ndarray, np.ndarray]:
    """Mask of paths whose sampled coordinates stay inside the grid, plus first exit index."""
    states = path_states(bundle, cas.partition, cas.mode)
    inside = cas.grid.covers(states).all(axis=-1)
    ok = inside.all(axis=1)
    first_exit = np.where(ok, -1, np.argmin(inside, axis=1))
    return ok, first_exit


def _triple_block(cas: CascadeSolution, bundle: PathBundle, rejected: int) -> TripleBlock:
    times = bundle.times
    knots = knot_indices(times, cas.partition)
    P, n_points = bundle.B.shape
    states = path_states(bundle, cas.partition, cas.mode)
    Y = np.empty((P, n_points))
    Z = np.empty((P, n_points))
    drive = np.empty((P, n_points))
    K = np.zeros((P, n_points))
    for k in range(1, cas.n_intervals + 1):
        sol = cas.interval(k)
        js = np.arange(knots[k - 1], knots[k] + 1)
        t = np.clip(times[js], sol.t_a, sol.t_b)
        if cas.mode == "running_sum":
            x = bundle.B[:, js]
            params = None
        else:
            x = bundle.B[:, js] - bundle.B[:, knots[k - 1]][:, None]
            params = states[:, knots[k - 1], : k - 1][:, None, :] if k > 1 else None
        u = sol.sample("u", t, x, params)
        du = sol.sample("du", t, x, params)
        a = sol.sample("drive", t, x, params)
        # later intervals overwrite the shared knot: the triple is right-continuous
        Y[:, js] = u
        Z[:, js] = du
        drive[:, js] = a
        Ga = gcore.g_function(a, cas.band)
        dqv = np.diff(bundle.qv[js])
        ds = np.diff(times[js])
        dK = 0.25 * (a[:, :-1] + a[:, 1:]) * dqv - 0.5 * (Ga[:, :-1] + Ga[:, 1:]) * ds
        K[:, js[1:]] = K[:, js[0]][:, None] + np.cumsum(dK, axis=1)
    return TripleBlock(bundle=bundle, Y=Y, Z=Z, K=K, drive=drive, rejected=rejected)


def build_solution_paths(
    cas: CascadeSolution,
    scenarios: ScenarioFamily | Sequence[PathBundle],
    on_exit: Literal["raise", "reject"] = "raise",
) -> SolutionTriplePaths:
    """Y_t = u^k(t, B^k_t), Z_t = D_x u^k(t, B^k_t) and the trapezoidal K along every path.

    K_t = K_{t_{k-1}} + ½∫(D²u + 2f) d⟨B⟩ − ∫G(D²u + 2f) ds with the realized qv increments.
    """
    bundles = simulate_family(scenarios) if isinstance(scenarios, ScenarioFamily) else list(scenarios)
    if not bundles:
        raise ConfigurationError("no scenario paths to build on")
    blocks = []
    for bundle in bundles:
        if abs(bundle.horizon - cas.partition.horizon) > 1e-9:
            raise ConfigurationError(f"scenario {bundle.label} ends at {bundle.horizon}, cascade at {cas.partition.horizon}")
        ok, first_exit = _points_in_grid(cas, bundle)
        rejected = int((~ok).sum())
        if rejected:
            bad = int(np.flatnonzero(~ok)[0])
            where = f"{bundle.scenario_ids[bad]} at t={bundle.times[first_exit[bad]]:.6g}"
            if on_exit == "raise":
                raise GridRangeError(f"path {where} leaves the grid [{cas.grid.x_min:g}, {cas.grid.x_max:g}]")
            logger.warning("%s: rejected %d paths leaving the grid (first: %s)", bundle.label, rejected, where)
            bundle = bundle.subset(ok)
            if len(bundle) == 0:
                continue
        blocks.append(_triple_block(cas, bundle, rejected))
    if not blocks:
        raise GridRangeError("every scenario path left the grid")
    return SolutionTriplePaths(
        times=bundles[0].times,
        blocks=tuple(blocks),
        partition=cas.partition,
        mode=cas.mode,
        band=cas.band,
        y_bound=cas.y_bound,
        z_bound=cas.ledger.m_z,
        metadata={"generator": cas.generator.name, "terminal": cas.terminal.name},
    )


# ── Residuals ───────────────────────────────────────────


@dataclass(frozen=True)
class ResidualReport:
    per_path_max: np.ndarray
    nan_paths: list[str]
    dt: float

    @property
    def max(self) -> float:
        finite = self.per_path_max[np.isfinite(self.per_path_max)]
        return float(finite.max()) if len(finite) else math.nan

    @property
    def mean(self) -> float:
        finite = self.per_path_max[np.isfinite(self.per_path_max)]
        return float(finite.mean()) if len(finite) else math.nan


def residual_check(
    paths: SolutionTriplePaths, f: GeneratorSpec, phi: TerminalSpec, partition: TimePartition
) -> ResidualReport:
    """R_t = Y_t − [φ(B^N_T) + ∫_t^T f d⟨B⟩ − ∫_t^T Z dB − (K_T − K_t)], max over t per path."""
    per_path, nan_ids = [], []
    for block in paths.blocks:
        bundle = block.bundle
        states = path_states(bundle, partition, paths.mode)
        F = f(bundle.times, states, block.Y, block.Z)
        terminal = phi(states[:, -1, :])
        f_int = qv_integral(F, bundle)
        z_int = ito_integral(block.Z, bundle)
        f_tail = f_int[:, -1:] - f_int
        z_tail = z_int[:, -1:] - z_int
        R = block.Y - (terminal[:, None] + f_tail - z_tail - (block.K[:, -1:] - block.K))
        worst = np.max(np.abs(R), axis=1)
        bad = ~np.isfinite(worst)
        nan_ids += [bundle.scenario_ids[i] for i in np.flatnonzero(bad)]
        per_path.append(worst)
    if nan_ids:
        logger.warning("%d paths with non-finite residuals", len(nan_ids))
    return ResidualReport(per_path_max=np.concatenate(per_path), nan_paths=nan_ids, dt=float(paths.times[1] - paths.times[0]))


@dataclass(frozen=True)
class RefinementStudy:
    dts: list[float]
    max_residuals: list[float]
    mean_residuals: list[float]
    scenarios: list[str] = field(default_factory=list)

    def nonincreasing(self, slack: float = 0.0) -> bool:
        """max|R| never grows from one refinement to the next."""
        return all(b <= a + slack for a, b in zip(self.max_residuals, self.max_residuals[1:]))


def residual_refinement(
    cas: CascadeSolution,
    bundles: Sequence[PathBundle],
    factors: Sequence[int] = (4, 2, 1),
) -> RefinementStudy:
    """Residuals on coarsened copies of the same fine paths, coarsest first, one control at a time."""
    dts, maxima, means = [], [], []
    for factor in factors:
        worst, nan_ids, dt = [], [], math.nan
        for bundle in bundles:
            paths = build_solution_paths(cas, [bundle.coarsen(factor)])
            report = residual_check(paths, cas.generator, cas.terminal, cas.partition)
            worst.append(report.per_path_max)
            nan_ids += report.nan_paths
            dt = report.dt
        combined = ResidualReport(per_path_max=np.concatenate(worst), nan_paths=nan_ids, dt=dt)
        dts.append(combined.dt)
        maxima.append(combined.max)
        means.append(combined.mean)
        logger.info("residual at dt=%.4g: max %.4g, mean %.4g", combined.dt, combined.max, combined.mean)
    return RefinementStudy(dts, maxima, means, scenarios=[b.label for b in bundles])
