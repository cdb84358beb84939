"""Foundational value types: volatility band, partitions, grids, generators and kernels.

The validated parameter types are frozen pydantic models. Everything carrying
callables or arrays is a frozen dataclass; none of them is mutated after
construction, so instances can be shared between worker threads.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from glab.errors import ConfigurationError, DomainError, ShapeError

Reduction = Literal["none", "sum"]


# ── Parameters ──────────────────────────────────────────


class VolatilityBand(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma_lo: float
    sigma_hi: float

    @model_validator(mode="after")
    def _ordered(self) -> "VolatilityBand":
        if not (math.isfinite(self.sigma_lo) and math.isfinite(self.sigma_hi)):
            raise ValueError("volatilities must be finite")
        if not 0 < self.sigma_lo <= self.sigma_hi:
            raise ValueError(
                f"need 0 < sigma_lo <= sigma_hi, got [{self.sigma_lo}, {self.sigma_hi}]"
            )
        return self

    @property
    def is_degenerate(self) -> bool:
        return self.sigma_lo == self.sigma_hi

    @property
    def var_lo(self) -> float:
        return self.sigma_lo**2

    @property
    def var_hi(self) -> float:
        return self.sigma_hi**2


class TimePartition(BaseModel):
    """0 = t_0 < t_1 < ... < t_N = T."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    times: tuple[float, ...]

    @field_validator("times")
    @classmethod
    def _increasing(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if len(v) < 2:
            raise ValueError("a partition needs at least two times")
        if v[0] != 0.0:
            raise ValueError(f"partition must start at 0, got {v[0]}")
        if any(not math.isfinite(t) for t in v):
            raise ValueError("partition times must be finite")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("partition times must be strictly increasing")
        return v

    @classmethod
    def uniform(cls, horizon: float, n_intervals: int) -> "TimePartition":
        if n_intervals < 1:
            raise DomainError(f"need at least one interval, got {n_intervals}")
        step = horizon / n_intervals
        return cls(times=tuple(step * i for i in range(n_intervals)) + (float(horizon),))

    @classmethod
    def dyadic(cls, horizon: float, level: int) -> "TimePartition":
        """π^n with 2^n equal intervals; π^m ⊂ π^n whenever m ≤ n."""
        if level < 0:
            raise DomainError(f"dyadic level must be >= 0, got {level}")
        return cls.uniform(horizon, 2**level)

    @property
    def horizon(self) -> float:
        return self.times[-1]

    @property
    def n_intervals(self) -> int:
        return len(self.times) - 1

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(np.asarray(self.times))

    def mesh(self) -> float:
        return float(self.gaps.max())

    def contains(self, other: "TimePartition", tol: float = 1e-12) -> bool:
        """True when every time of ``other`` is a time of this partition."""
        mine = np.asarray(self.times)
        return all(np.min(np.abs(mine - t)) <= tol * max(1.0, self.horizon) for t in other.times)

    def locate(self, t: float) -> int:
        """Index k (1-based) with t in [t_{k-1}, t_k]; t = t_k maps to k."""
        if t < 0 or t > self.horizon:
            raise DomainError(f"time {t} outside [0, {self.horizon}]")
        k = int(np.searchsorted(np.asarray(self.times), t, side="left"))
        return max(k, 1)


class SpaceGrid(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    x_min: float
    x_max: float
    m: int

    @model_validator(mode="after")
    def _valid(self) -> "SpaceGrid":
        if self.m < 3:
            raise ValueError(f"grid needs at least 3 nodes, got {self.m}")
        if not self.x_min < self.x_max:
            raise ValueError(f"need x_min < x_max, got [{self.x_min}, {self.x_max}]")
        return self

    @classmethod
    def symmetric(cls, half_width: float, m: int) -> "SpaceGrid":
        return cls(x_min=-half_width, x_max=half_width, m=m)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.m - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.m)

    def cfl_dt(self, band: VolatilityBand, safety: float = 0.4) -> float:
        return safety * self.dx**2 / band.var_hi

    def covers(self, values: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        slack = tol * (self.x_max - self.x_min)
        return (values >= self.x_min - slack) & (values <= self.x_max + slack)


# ── Moduli of continuity ────────────────────────────────


@dataclass(frozen=True)
class LinearModulus:
    """w(δ) = slope·δ."""

    slope: float

    def __call__(self, delta):
        return self.slope * np.asarray(delta, dtype=float)


@dataclass(frozen=True)
class HolderModulus:
    """w(δ) = scale·δ^exponent with exponent in (0, 1]; concave and sub-additive."""

    scale: float
    exponent: float = 0.5

    def __post_init__(self):
        if not 0 < self.exponent <= 1:
            raise DomainError(f"Hölder exponent must lie in (0, 1], got {self.exponent}")

    def __call__(self, delta):
        return self.scale * np.power(np.abs(np.asarray(delta, dtype=float)), self.exponent)


# ── Generators and terminals ────────────────────────────


def _accepts(spec, x: np.ndarray) -> bool:
    """Sum-reduced specs also take a single column holding the running sum."""
    if x.ndim == 0:
        return False
    return x.shape[-1] == spec.n_vars or (spec.reduction == "sum" and x.shape[-1] == 1)


@dataclass(frozen=True)
class GeneratorSpec:
    """Driver f(t, x_1..x_N, y, z) together with its declared constants.

    ``eval`` is vectorized: ``x`` carries the increments on its last axis and
    ``t``, ``y``, ``z`` broadcast against ``x[..., 0]``. With ``reduction="sum"``
    the increments enter only through their sum and ``x`` may be that sum alone.
    """

    eval: Callable[..., Any]
    n_vars: int
    m0: float
    l_y: float
    l_z: float
    l_x: float = 0.0
    modulus: Callable[[Any], Any] | None = None
    name: str = "custom"
    reduction: Reduction = "none"

    def __post_init__(self):
        if self.n_vars < 1:
            raise ShapeError(f"generator needs at least one increment, got {self.n_vars}")
        if min(self.m0, self.l_y, self.l_z, self.l_x) < 0:
            raise DomainError(f"generator {self.name}: declared constants must be >= 0")
        if self.modulus is None:
            object.__setattr__(self, "modulus", LinearModulus(self.l_x))

    def __call__(self, t, x, y, z) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not _accepts(self, x):
            raise ShapeError(f"generator {self.name} expects {self.n_vars} increments, got {x.shape[-1]}")
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], t.shape, y.shape, z.shape)
        return np.broadcast_to(np.asarray(self.eval(t, x, y, z), dtype=float), shape)

    def replace(self, **changes) -> "GeneratorSpec":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TerminalSpec:
    """Terminal function φ(x_1..x_N), vectorized over leading axes of x."""

    phi: Callable[[np.ndarray], Any]
    n_vars: int
    bound: float
    lipschitz: float
    name: str = "custom"
    reduction: Reduction = "none"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not _accepts(self, x):
            raise ShapeError(f"terminal {self.name} expects {self.n_vars} increments, got {x.shape[-1]}")
        return np.broadcast_to(np.asarray(self.phi(x), dtype=float), x.shape[:-1])

    @property
    def is_bounded(self) -> bool:
        return math.isfinite(self.bound)


@dataclass(frozen=True)
class PathGeneratorSpec:
    """Path-dependent driver h(t, ω, y, z) evaluated on stopped embedded paths.

    ``markovian`` generators see the path only through ω(t); they may supply
    ``eval_current(t, w, y, z)`` which is then used instead of building the path.
    """

    eval: Callable[..., Any]
    m0: float
    l_y: float
    l_z: float
    l_path: float = 0.0
    modulus: Callable[[Any], Any] | None = None
    name: str = "custom"
    markovian: bool = False
    eval_current: Callable[..., Any] | None = None

    def __post_init__(self):
        if min(self.m0, self.l_y, self.l_z, self.l_path) < 0:
            raise DomainError(f"path generator {self.name}: declared constants must be >= 0")
        if self.modulus is None:
            object.__setattr__(self, "modulus", LinearModulus(self.l_path))
        if self.eval_current is not None and not self.markovian:
            raise ConfigurationError(f"path generator {self.name}: eval_current requires markovian=True")


# ── Paths and kernels ───────────────────────────────────


@dataclass(frozen=True)
class EmbeddedPath:
    """Piecewise-linear path through ``values`` at knots ``times``, constant after the last knot.

    Arrays have shape (..., N+1); the leading axes index a batch of paths.
    Segments of zero length are jumps taken right after their left knot.
    """

    times: np.ndarray
    values: np.ndarray
    stop: np.ndarray
    horizon: float

    def at(self, s) -> np.ndarray:
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        lo = self.times[..., :-1, None]
        hi = self.times[..., 1:, None]
        width = hi - lo
        with np.errstate(divide="ignore", invalid="ignore"):
            ramp = np.where(width > 0, np.clip((s_arr - lo) / width, 0.0, 1.0), (s_arr > lo).astype(float))
        steps = np.diff(self.values, axis=-1)[..., None]
        out = np.sum(steps * ramp, axis=-2)
        return out[..., 0] if np.ndim(s) == 0 else out

    def current(self) -> np.ndarray:
        return self.values[..., -1]

    def running_mean(self) -> np.ndarray:
        """(1/t)∫_0^t ω(s) ds; exact by the trapezoid rule on the knots. Zero at t = 0."""
        widths = np.diff(self.times, axis=-1)
        area = np.sum(widths * 0.5 * (self.values[..., 1:] + self.values[..., :-1]), axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.stop > 0, area / np.where(self.stop > 0, self.stop, 1.0), 0.0)

    def sup_distance(self, other: "EmbeddedPath") -> np.ndarray:
        """Sup-norm distance on [0, T]; both paths are linear between the merged knots."""
        knots = np.concatenate([self.times, other.times, np.broadcast_to(self.horizon, self.stop.shape)[..., None]], axis=-1)
        knots = np.sort(knots, axis=-1)
        gaps = [np.abs(self._eval_batched(knots) - other._eval_batched(knots))]
        # left limits at jump knots
        eps = 1e-12 * max(1.0, self.horizon)
        gaps.append(np.abs(self._eval_batched(knots - eps) - other._eval_batched(knots - eps)))
        return np.max(np.maximum(*gaps), axis=-1)

    def _eval_batched(self, s: np.ndarray) -> np.ndarray:
        lo = self.times[..., :-1, None]
        hi = self.times[..., 1:, None]
        width = hi - lo
        pts = s[..., None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            ramp = np.where(width > 0, np.clip((pts - lo) / width, 0.0, 1.0), (pts > lo).astype(float))
        steps = np.diff(self.values, axis=-1)[..., None]
        return np.sum(steps * ramp, axis=-2)


@dataclass(frozen=True)
class Mollifier:
    """Quadrature rule for the bump kernel of radius 1/n in ``dim`` dimensions."""

    n: int
    dim: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    nodes_per_axis: int = 16

    @property
    def radius(self) -> float:
        return 1.0 / self.n

    @property
    def size(self) -> int:
        return len(self.weights)

    def is_normalized(self, tol: float = 1e-10) -> bool:
        return abs(float(self.weights.sum()) - 1.0) <= tol and bool(np.all(self.weights >= 0))


@dataclass(frozen=True)
class DerivativeLedger:
    """Bounds L^1..L^N on D_{x_k} u^k; ``bounds[k-1]`` is L^k."""

    bounds: tuple[float, ...]
    phi_lipschitz: float
    l_x: float
    l_y: float

    @property
    def m_z(self) -> float:
        return self.bounds[0]

    def bound(self, k: int) -> float:
        if not 1 <= k <= len(self.bounds):
            raise DomainError(f"interval index {k} outside 1..{len(self.bounds)}")
        return self.bounds[k - 1]

    def z_cap(self, enlargement: float = 1.1) -> float | None:
        return enlargement * self.m_z if math.isfinite(self.m_z) else None
