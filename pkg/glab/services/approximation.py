"""Discretize, mollify and solve a path-dependent G-BSDE on nested dyadic partitions.

Level n uses the partition of [0, T] into 2^n equal intervals, the discretized
generator f̄^n, its (t, x) and then (y, z) mollification with kernels of radius
1/n, and the cylinder terminal built on the level's increments. All levels share
one PDE time step and one set of fine scenario paths, so successive solutions are
compared on the same trajectories.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from glab.config import settings
from glab.errors import ConfigurationError, GLabError
from glab.models import PathGeneratorSpec, TimePartition, VolatilityBand
from glab.schemas import GridConfig
from glab.services import gcore
from glab.services.cascade import build_solution_paths, knot_indices, solve_cascade
from glab.services.presets import build_terminal
from glab.services.scenarios import PathBundle, ScenarioFamily, UpperExpectation, simulate_family, upper_expectation_of

logger = logging.getLogger(__name__)

MAX_KERNEL_POINTS = 4_096
CHORD_CHUNK = 4_000_000


# ── Embedding error ─────────────────────────────────────


def chord_errors(bundle: PathBundle, partition: TimePartition) -> tuple[np.ndarray, np.ndarray]:
    """Per path: sup over stop times t of ‖B^{n,t} − B^t‖_∞, and 2·max interval oscillation.

    For t in (t_{k-1}, t_k] the two stopped paths agree after t and on earlier
    intervals differ by the chord error; on [t_{k-1}, t] the embedded path is the
    chord from B_{t_{k-1}} to B_t. Both sides are evaluated on the scenario grid.
    """
    knots = knot_indices(bundle.times, partition)
    worst = np.zeros(len(bundle))
    oscillation = np.zeros(len(bundle))
    for a, b in zip(knots[:-1], knots[1:]):
        seg = bundle.B[:, a : b + 1] - bundle.B[:, a : a + 1]
        m = b - a
        r = np.arange(m + 1)[:, None]
        j = np.arange(m + 1)[None, :]
        mask = (j > 0) & (r <= j)
        frac = np.where(mask, r / np.maximum(j, 1), 0.0)
        chunk = max(1, CHORD_CHUNK // (m + 1) ** 2)
        for start in range(0, len(bundle), chunk):
            part = seg[start : start + chunk]
            err = np.abs(part[:, :, None] - frac[None] * part[:, None, :])
            err = np.where(mask[None], err, 0.0)
            worst[start : start + chunk] = np.maximum(worst[start : start + chunk], err.max(axis=(1, 2)))
        oscillation = np.maximum(oscillation, np.abs(seg).max(axis=1))
    return worst, 2.0 * oscillation


@dataclass(frozen=True)
class EmbeddingError:
    level: int
    estimate: UpperExpectation
    oscillation: UpperExpectation
    pathwise_violations: int

    @property
    def value(self) -> float:
        return self.estimate.estimate


def embedding_error(level: int, scenarios: ScenarioFamily | Sequence[PathBundle]) -> EmbeddingError:
    """Ê[sup_t ‖B^{n,t} − B^t‖_∞] on the dyadic partition of the given level."""
    bundles = simulate_family(scenarios) if isinstance(scenarios, ScenarioFamily) else list(scenarios)
    if not bundles:
        raise ConfigurationError("embedding_error needs scenario paths")
    partition = TimePartition.dyadic(bundles[0].horizon, level)
    errors, bounds, violations = [], [], 0
    for bundle in bundles:
        try:
            err, bound = chord_errors(bundle, partition)
        except GLabError as e:
            raise e.add_context(f"approximation level {level}")
        violations += int(np.count_nonzero(err > bound + 1e-12))
        errors.append((bundle, err))
        bounds.append((bundle, bound))
    return EmbeddingError(level, upper_expectation_of(errors), upper_expectation_of(bounds), violations)


# ── Pipeline ────────────────────────────────────────────


@dataclass(frozen=True)
class LevelReport:
    level: int
    n_intervals: int
    mode: str
    y0: float
    sup_gap: float | None
    z_gap: float | None
    embedding_error: float
    embedding_stderr: float
    oscillation_bound: float
    generator_gap_bound: float
    m_z: float
    tx_nodes_per_axis: int


@dataclass(frozen=True)
class ApproxReport:
    generator: str
    terminal: str
    pde_dt: float
    levels: list[LevelReport]
    notes: list[str] = field(default_factory=list)

    @property
    def sup_gaps(self) -> list[float]:
        return [lv.sup_gap for lv in self.levels if lv.sup_gap is not None]

    def gaps_nonincreasing(self, slack: float = 1e-6) -> bool:
        gaps = self.sup_gaps
        return all(b <= a + slack for a, b in zip(gaps, gaps[1:]))

    def decay_ratios(self) -> list[float]:
        errs = [lv.embedding_error for lv in self.levels]
        return [a / b if b > 0 else math.inf for a, b in zip(errs, errs[1:])]

    def decay_targets(self) -> list[float]:
        """A factor √2 per level between consecutive levels."""
        return [math.sqrt(2.0) ** (b.level - a.level) for a, b in zip(self.levels, self.levels[1:])]

    def decay_bands(self, sigmas: float) -> list[float]:
        """``sigmas`` standard errors of each decay ratio, propagated from both levels' estimates."""
        out = []
        for a, b in zip(self.levels, self.levels[1:]):
            if a.embedding_error <= 0 or b.embedding_error <= 0:
                out.append(0.0)
                continue
            ratio = a.embedding_error / b.embedding_error
            rel = math.hypot(a.embedding_stderr / a.embedding_error, b.embedding_stderr / b.embedding_error)
            out.append(sigmas * ratio * rel)
        return out

    def embedding_decays(self, sigmas: float = 3.0) -> bool:
        return all(
            r >= target - band
            for r, target, band in zip(self.decay_ratios(), self.decay_targets(), self.decay_bands(sigmas))
        )

    def level_invariant(self, tol: float) -> bool:
        y0s = [lv.y0 for lv in self.levels]
        return max(y0s) - min(y0s) <= tol


def common_pde_dt(band: VolatilityBand, horizon: float, grid_config: GridConfig, max_level: int) -> float:
    """Largest CFL-admissible step dividing every dyadic interval up to ``max_level``."""
    grid = grid_config.space_grid(band, horizon)
    finest = horizon / 2**max_level
    return finest / math.ceil(finest / grid.cfl_dt(band, grid_config.dt_safety) - 1e-9)


def kernel_order(nodes_per_axis: int, dims: int, budget: int = MAX_KERNEL_POINTS) -> int:
    """Largest Gauss–Legendre order up to ``nodes_per_axis`` whose tensor grid fits ``budget``.

    The order stops at 3, whose centre node keeps the ball rule non-empty in any dimension.
    """
    q = nodes_per_axis
    while q > 3 and q**dims > budget:
        q -= 1
    return q


def approximation_pipeline(
    h: PathGeneratorSpec,
    terminal_preset: str,
    terminal_params: dict | None,
    levels: Sequence[int],
    band: VolatilityBand,
    horizon: float,
    grid_config: GridConfig,
    scenarios: ScenarioFamily | Sequence[PathBundle],
    nodes_per_axis: int = 16,
) -> ApproxReport:
    levels = list(levels)
    if not levels or any(b <= a for a, b in zip(levels, levels[1:])) or levels[0] < 1:
        raise ConfigurationError(f"levels must increase and start at 1 or above, got {levels}")
    bundles = simulate_family(scenarios) if isinstance(scenarios, ScenarioFamily) else list(scenarios)
    dt = common_pde_dt(band, horizon, grid_config, levels[-1])
    logger.info("approximation %s: levels %s, common PDE dt %.4g", h.name, levels, dt)

    reports: list[LevelReport] = []
    notes: list[str] = []
    previous = None
    terminal_name = terminal_preset
    for n in levels:
        where = f"approximation level {n}"
        partition = TimePartition.dyadic(horizon, n)
        try:
            for bundle in bundles:
                knot_indices(bundle.times, partition)
            f = gcore.discretize_path_generator(h, partition)
            dims = 2 if f.reduction == "sum" else f.n_vars + 1
            if f.reduction != "sum" and f.n_vars > settings.max_increment_dims:
                raise ConfigurationError(
                    f"path-dependent generator needs {f.n_vars} frozen increments; "
                    f"at most {settings.max_increment_dims} are supported"
                )
            tx_order = kernel_order(nodes_per_axis, dims)
            if tx_order < nodes_per_axis:
                logger.info("level %d: (t, x) kernel on %d axes uses %d nodes per axis", n, dims, tx_order)
            f_tx = gcore.mollify_generator_tx(f, gcore.build_mollifier(n, dims, tx_order), horizon)
            f_n = gcore.mollify_generator_yz(f_tx, gcore.build_mollifier(n, 2, nodes_per_axis))
            phi = build_terminal(terminal_preset, partition.n_intervals, terminal_params)
            terminal_name = phi.name
            cas = solve_cascade(f_n, phi, partition, band, grid_config, dt_max=dt)
            paths = build_solution_paths(cas, bundles)
            emb = embedding_error(n, bundles)
        except GLabError as e:
            raise e.add_context(where)

        sup_gap = z_gap = None
        if previous is not None:
            sup_gap = max(float(np.max(np.abs(a.Y - b.Y))) for a, b in zip(paths.blocks, previous.blocks))
            z_gap = upper_expectation_of(
                [
                    (a.bundle, np.sum((a.Z - b.Z)[:, :-1] ** 2 * np.diff(a.bundle.times), axis=1))
                    for a, b in zip(paths.blocks, previous.blocks)
                ]
            ).estimate
        if emb.pathwise_violations:
            notes.append(f"level {n}: {emb.pathwise_violations} paths exceed the oscillation bound")
        m_z = cas.ledger.m_z
        report = LevelReport(
            level=n,
            n_intervals=partition.n_intervals,
            mode=cas.mode,
            y0=cas.y0,
            sup_gap=sup_gap,
            z_gap=z_gap,
            embedding_error=emb.value,
            embedding_stderr=emb.estimate.stderr,
            oscillation_bound=emb.oscillation.estimate,
            generator_gap_bound=gcore.mollification_gap_bound(f, n, m_z, dims),
            m_z=m_z,
            tx_nodes_per_axis=tx_order,
        )
        logger.info(
            "level %d: Y0=%.6g, sup gap %s, embedding error %.4g",
            n, report.y0, "-" if sup_gap is None else f"{sup_gap:.4g}", report.embedding_error,
        )
        reports.append(report)
        previous = paths
    return ApproxReport(generator=h.name, terminal=terminal_name, pde_dt=dt, levels=reports, notes=notes)
