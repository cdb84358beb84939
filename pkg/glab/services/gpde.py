"""Explicit monotone finite-difference solver for the one-dimensional G-equations.

Both the forward G-heat equation ∂_t u = G(D²u) and the backward generator
equation ∂_t u + G(D²u + 2f(t, x, u, Du)) = 0 are marched with explicit Euler
steps, centered differences and dt ≤ safety·dx²/σ̄². At the two boundary nodes
the second difference is taken as zero (linear extrapolation).

Earlier increments of a cascade interval enter as frozen parameters on a
tensor grid: arrays are shaped (*params, time, space).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from glab.errors import (
    ConfigurationError,
    DomainError,
    GeneratorError,
    GLabError,
    GridRangeError,
    NumericFailure,
    ShapeError,
)
from glab.models import GeneratorSpec, SpaceGrid, TerminalSpec, TimePartition, VolatilityBand
from glab.services.gcore import g_function

logger = logging.getLogger(__name__)

CFL_SAFETY = 0.4
RANGE_TOL = 1e-9


@dataclass(frozen=True)
class GridSolution:
    """u, D_x u and D²_x u of one interval on (params, time, space).

    ``drive`` holds the argument of G (D²u + 2f) at the stored time levels when a
    generator was involved.
    """

    t_a: float
    t_b: float
    times: np.ndarray
    grid: SpaceGrid
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray
    drive: np.ndarray | None = None
    param_axes: tuple[np.ndarray, ...] = ()
    label: str = ""
    _interpolators: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def param_shape(self) -> tuple[int, ...]:
        return self.u.shape[:-2]

    @property
    def n_params(self) -> int:
        return len(self.param_axes)

    def initial(self) -> np.ndarray:
        """u at t_a, shape (*params, m)."""
        return self.u[..., 0, :]

    def final(self) -> np.ndarray:
        return self.u[..., -1, :]

    def _interpolator(self, name: str) -> RegularGridInterpolator:
        if name not in self._interpolators:
            values = getattr(self, name)
            if values is None:
                raise ConfigurationError(f"solution {self.label} stores no {name!r} field")
            axes = (*self.param_axes, self.times, self.grid.nodes)
            self._interpolators[name] = RegularGridInterpolator(axes, values, method="linear", bounds_error=True)
        return self._interpolators[name]

    def sample(self, name: str, t, x, params=None) -> np.ndarray:
        """Multilinear interpolation of ``name`` at (params, t, x); all arguments broadcast."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.n_params:
            if params is None:
                raise ShapeError(f"solution {self.label} needs {self.n_params} frozen increments")
            params = np.asarray(params, dtype=float)
            if params.shape[-1] != self.n_params:
                raise ShapeError(f"expected {self.n_params} frozen increments, got {params.shape[-1]}")
            shape = np.broadcast_shapes(params.shape[:-1], t.shape, x.shape)
            coords = [np.broadcast_to(params[..., i], shape) for i in range(self.n_params)]
        else:
            shape = np.broadcast_shapes(t.shape, x.shape)
            coords = []
        coords += [np.broadcast_to(t, shape), np.broadcast_to(x, shape)]
        axes = (*self.param_axes, self.times, self.grid.nodes)
        clipped = []
        for axis, c in zip(axes, coords):
            lo, hi = axis[0], axis[-1]
            slack = RANGE_TOL * max(1.0, hi - lo)
            if np.any(c < lo - slack) or np.any(c > hi + slack):
                raise GridRangeError(f"{self.label}: sample outside [{lo:.6g}, {hi:.6g}]")
            clipped.append(np.clip(c, lo, hi))
        points = np.stack(clipped, axis=-1)
        return self._interpolator(name)(points.reshape(-1, len(axes))).reshape(shape)

    def value(self, t: float, x: float, params=None) -> float:
        return float(self.sample("u", t, x, params))


# ── Discretization helpers ──────────────────────────────


def time_steps(
    length: float,
    grid: SpaceGrid,
    band: VolatilityBand,
    dt_max: float | None = None,
    safety: float = CFL_SAFETY,
) -> tuple[int, float]:
    """Number of equal steps covering ``length`` and their size, checked against the CFL limit."""
    limit = grid.cfl_dt(band, safety)
    target = limit if dt_max is None else dt_max
    if target <= 0:
        raise ConfigurationError(f"time step must be positive, got {target}")
    n_steps = max(1, math.ceil(length / target - 1e-9))
    dt = length / n_steps
    if dt > limit * (1 + 1e-9):
        raise ConfigurationError(
            f"CFL violated: dt={dt:.4g} exceeds {safety}*dx^2/sigma_hi^2={limit:.4g} (dx={grid.dx:.4g})"
        )
    return n_steps, dt


def store_indices(n_steps: int, store_steps: int | None) -> np.ndarray:
    """Step indices kept in a solution; the first and last level are always kept."""
    if store_steps is None or store_steps >= n_steps:
        return np.arange(n_steps + 1)
    return np.unique(np.round(np.linspace(0, n_steps, max(store_steps, 1) + 1)).astype(int))


def second_difference(u: np.ndarray, dx: float) -> np.ndarray:
    d2 = np.zeros_like(u)
    d2[..., 1:-1] = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) / dx**2
    return d2


def first_difference(u: np.ndarray, dx: float) -> np.ndarray:
    return np.gradient(u, dx, axis=-1, edge_order=2)


def derivatives(u: np.ndarray, dx: float) -> tuple[np.ndarray, np.ndarray]:
    """Central differences inside, one-sided second order at the two ends."""
    du = first_difference(u, dx)
    d2u = np.empty_like(u)
    d2u[..., 1:-1] = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) / dx**2
    if u.shape[-1] >= 4:
        d2u[..., 0] = (2 * u[..., 0] - 5 * u[..., 1] + 4 * u[..., 2] - u[..., 3]) / dx**2
        d2u[..., -1] = (2 * u[..., -1] - 5 * u[..., -2] + 4 * u[..., -3] - u[..., -4]) / dx**2
    else:
        d2u[..., 0] = d2u[..., 1]
        d2u[..., -1] = d2u[..., -2]
    return du, d2u


def extract_derivatives(sol: GridSolution) -> tuple[np.ndarray, np.ndarray]:
    return derivatives(sol.u, sol.grid.dx)


def parameter_axis(grid: SpaceGrid, nodes: int) -> np.ndarray:
    """Axis for a frozen increment; it spans the spatial grid so stitching never leaves it."""
    if nodes < 2:
        raise ConfigurationError(f"parameter axes need at least 2 nodes, got {nodes}")
    return np.linspace(grid.x_min, grid.x_max, nodes)


def interp_last_axis(values: np.ndarray, nodes: np.ndarray, targets) -> np.ndarray:
    """Linear interpolation of ``values`` along its last axis, sampled at ``nodes``."""
    targets = np.asarray(targets, dtype=float)
    slack = RANGE_TOL * max(1.0, nodes[-1] - nodes[0])
    if np.any(targets < nodes[0] - slack) or np.any(targets > nodes[-1] + slack):
        raise GridRangeError(f"interpolation target outside [{nodes[0]:.6g}, {nodes[-1]:.6g}]")
    targets = np.clip(targets, nodes[0], nodes[-1])
    idx = np.clip(np.searchsorted(nodes, targets, side="right") - 1, 0, len(nodes) - 2)
    weight = (targets - nodes[idx]) / (nodes[idx + 1] - nodes[idx])
    return values[..., idx] * (1.0 - weight) + values[..., idx + 1] * weight


def state_tensor(param_axes: tuple[np.ndarray, ...], nodes: np.ndarray, n_vars: int) -> np.ndarray:
    """Increment vectors (x^(k-1), x_k, 0, ..., 0) on the (params, space) grid."""
    k = len(param_axes) + 1
    if k > n_vars:
        raise ShapeError(f"{len(param_axes)} frozen increments do not fit {n_vars} variables")
    grids = np.meshgrid(*param_axes, nodes, indexing="ij")
    state = np.zeros(grids[0].shape + (n_vars,))
    for i, g in enumerate(grids):
        state[..., i] = g
    return state


def stitch_terminal(next_sol: GridSolution, grid: SpaceGrid) -> np.ndarray:
    """u^{k+1}(t_k, x^(k-1), x_k, 0) tabulated on the (params, space) grid of interval k."""
    if next_sol.n_params == 0:
        raise ShapeError("stitching needs the next interval to carry frozen increments")
    at_zero = interp_last_axis(next_sol.initial(), next_sol.grid.nodes, 0.0)
    return interp_last_axis(at_zero, next_sol.param_axes[-1], grid.nodes)


def _check_finite(u: np.ndarray, label: str, step: int) -> None:
    if not np.all(np.isfinite(u)):
        raise NumericFailure(f"{label}: non-finite values in sweep", step=step)


def _evaluate_generator(f: GeneratorSpec, t: float, state, y, z) -> np.ndarray:
    try:
        return f(t, state, y, z)
    except GLabError:
        raise
    except Exception as e:
        raise GeneratorError(f"generator {f.name} failed at t={t:.6g}: {e}") from e


# ── Solvers ─────────────────────────────────────────────


def solve_g_heat(
    phi: TerminalSpec,
    band: VolatilityBand,
    horizon: float,
    grid: SpaceGrid,
    dt_max: float | None = None,
    *,
    safety: float = CFL_SAFETY,
    store_steps: int | None = None,
) -> GridSolution:
    """∂_t u − G(D²u) = 0, u(0, ·) = φ, marched forward to ``horizon``."""
    if phi.n_vars != 1:
        raise DomainError(f"G-heat needs a one-increment terminal, {phi.name} has {phi.n_vars}")
    if horizon <= 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    n_steps, dt = time_steps(horizon, grid, band, dt_max, safety)
    keep = set(store_indices(n_steps, store_steps).tolist())
    label = f"g-heat:{phi.name}"
    logger.info("%s: %d steps of %.3g on %d nodes", label, n_steps, dt, grid.m)

    u = np.array(phi(grid.nodes[:, None]), dtype=float)
    stored = [u]
    dx = grid.dx
    for j in range(1, n_steps + 1):
        u = u + dt * g_function(second_difference(u, dx), band)
        _check_finite(u, label, j)
        if j in keep:
            stored.append(u)

    times = np.array(sorted(keep), dtype=float) * dt
    times[-1] = horizon
    values = np.stack(stored)
    du, d2u = derivatives(values, dx)
    return GridSolution(t_a=0.0, t_b=horizon, times=times, grid=grid, u=values, du=du, d2u=d2u, label=label)


def solve_generator_pde(
    f: GeneratorSpec | None,
    terminal: TerminalSpec | Callable | np.ndarray,
    band: VolatilityBand,
    interval: tuple[float, float],
    grid: SpaceGrid,
    dt_max: float | None = None,
    *,
    param_axes: tuple[np.ndarray, ...] = (),
    n_vars: int | None = None,
    safety: float = CFL_SAFETY,
    store_steps: int | None = None,
    label: str = "",
) -> GridSolution:
    """∂_t u + G(D²u + 2f(t, x, u, Du)) = 0 on [t_a, t_b] with u(t_b) = terminal.

    The state passed to ``f`` is (frozen params, x, 0, ..., 0). ``terminal`` is
    either a function of that state or an array already on the (params, space) grid.
    ``f=None`` gives the backward G-heat equation.
    """
    t_a, t_b = map(float, interval)
    if not t_b > t_a:
        raise DomainError(f"empty interval [{t_a}, {t_b}]")
    if n_vars is None:
        if f is not None:
            n_vars = f.n_vars
        elif isinstance(terminal, TerminalSpec):
            n_vars = terminal.n_vars
        else:
            n_vars = len(param_axes) + 1
    if f is not None and f.n_vars != n_vars:
        raise ShapeError(f"generator {f.name} has {f.n_vars} increments, expected {n_vars}")
    state = state_tensor(param_axes, grid.nodes, n_vars)
    target_shape = state.shape[:-1]
    if callable(terminal):
        u = np.array(terminal(state), dtype=float)
    else:
        u = np.array(terminal, dtype=float)
    if u.shape != target_shape:
        raise ShapeError(f"terminal values have shape {u.shape}, expected {target_shape}")

    n_steps, dt = time_steps(t_b - t_a, grid, band, dt_max, safety)
    keep = store_indices(n_steps, store_steps)
    keep_set = set(keep.tolist())
    label = label or f"pde:{getattr(f, 'name', 'zero')}"
    logger.debug("%s: [%g, %g] %d steps of %.3g, params %s", label, t_a, t_b, n_steps, dt, target_shape[:-1])
    dx = grid.dx

    def drive_at(u_level: np.ndarray, t: float) -> np.ndarray:
        a = second_difference(u_level, dx)
        if f is None:
            return a
        z = first_difference(u_level, dx)
        return a + 2.0 * _evaluate_generator(f, t, state, u_level, z)

    stored_u, stored_drive = [], []
    for j in range(n_steps):
        t = t_b - j * dt
        a = drive_at(u, t)
        if j in keep_set:
            stored_u.append(u)
            stored_drive.append(a)
        u = u + dt * g_function(a, band)
        _check_finite(u, label, j + 1)
    stored_u.append(u)
    stored_drive.append(drive_at(u, t_a))

    times = t_b - keep[::-1].astype(float) * dt
    times[0], times[-1] = t_a, t_b
    values = np.stack(stored_u[::-1], axis=-2)
    drive = np.stack(stored_drive[::-1], axis=-2)
    du, d2u = derivatives(values, dx)
    return GridSolution(
        t_a=t_a,
        t_b=t_b,
        times=times,
        grid=grid,
        u=values,
        du=du,
        d2u=d2u,
        drive=drive,
        param_axes=tuple(param_axes),
        label=label,
    )


# ── Cylinder functionals ────────────────────────────────


@dataclass(frozen=True)
class ConditionalGExpectation:
    """x^(i) ↦ Ê_{t_i}[φ(x_1, ..., x_N)] tabulated on the frozen-increment grid."""

    level: int
    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    terminal: TerminalSpec | None = None

    @property
    def value(self) -> float:
        if self.level != 0:
            raise ShapeError(f"level {self.level} expectation is a function, not a number")
        return float(self.values)

    def __call__(self, x=None):
        if self.level == 0:
            return self.value
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.level:
            raise ShapeError(f"expected {self.level} increments, got {x.shape[-1]}")
        if self.terminal is not None:
            return self.terminal(x)
        for i, axis in enumerate(self.axes):
            if np.any(x[..., i] < axis[0] - RANGE_TOL) or np.any(x[..., i] > axis[-1] + RANGE_TOL):
                raise GridRangeError(f"increment {i + 1} outside [{axis[0]:.6g}, {axis[-1]:.6g}]")
        interp = RegularGridInterpolator(self.axes, self.values, method="linear")
        return interp(np.clip(x, [a[0] for a in self.axes], [a[-1] for a in self.axes]))


def conditional_g_expectation(
    phi: TerminalSpec,
    partition: TimePartition,
    level: int,
    band: VolatilityBand,
    grid: SpaceGrid,
    dt_max: float | None = None,
    *,
    param_nodes: int = 21,
    safety: float = CFL_SAFETY,
) -> ConditionalGExpectation:
    """Ê_{t_i}[φ(B_{t_1}, B_{t_2} − B_{t_1}, ...)] by backward G-heat steps j = N..i+1."""
    n = partition.n_intervals
    if phi.n_vars != n:
        raise ShapeError(f"terminal {phi.name} has {phi.n_vars} increments, partition has {n}")
    if not 0 <= level <= n:
        raise DomainError(f"level {level} outside 0..{n}")
    axis = parameter_axis(grid, param_nodes)
    if level == n:
        return ConditionalGExpectation(level=n, axes=(axis,) * n, values=np.empty(0), terminal=phi)

    terminal: TerminalSpec | np.ndarray = phi
    sol = None
    for k in range(n, level, -1):
        params = (axis,) * (k - 1)
        try:
            sol = solve_generator_pde(
                None,
                terminal,
                band,
                (partition.times[k - 1], partition.times[k]),
                grid,
                dt_max,
                param_axes=params,
                n_vars=n,
                safety=safety,
                store_steps=1,
                label=f"cylinder:{phi.name}[{k}]",
            )
        except GLabError as e:
            raise e.add_context(f"interval {k}")
        if k - 1 > level:
            terminal = stitch_terminal(sol, grid)

    values = interp_last_axis(sol.initial(), grid.nodes, 0.0)
    return ConditionalGExpectation(level=level, axes=(axis,) * level, values=np.asarray(values))
