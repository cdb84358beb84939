"""Volatility scenarios: controlled paths under the Wiener measure and upper expectations.

Ê[ξ] = sup_P E^P[ξ] is approximated by the largest per-control Monte-Carlo mean
over a finite family of controls. The result is a lower bound of the
supremum over all admissible volatility processes.
"""

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from glab.config import settings
from glab.errors import ConfigurationError, DomainError, GLabError, ScenarioError, ShapeError
from glab.models import VolatilityBand

logger = logging.getLogger(__name__)


class ControlKind(str, enum.Enum):
    constant = "constant"
    bang_bang = "bang-bang"
    piecewise_random = "piecewise-random"


# ── Controls ────────────────────────────────────────────


@dataclass(frozen=True)
class VolatilityControl:
    """Per-step volatility h_j applied on [t_j, t_{j+1})."""

    kind: ControlKind
    values: np.ndarray = field(repr=False)
    band: VolatilityBand
    label: str
    switch_time: float | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or len(values) == 0:
            raise ShapeError(f"control {self.label} needs a non-empty 1-d value array")
        tol = 1e-12
        if np.any(values < self.band.sigma_lo - tol) or np.any(values > self.band.sigma_hi + tol):
            raise DomainError(
                f"control {self.label} leaves the band [{self.band.sigma_lo}, {self.band.sigma_hi}]"
            )
        object.__setattr__(self, "values", values)

    @property
    def n_steps(self) -> int:
        return len(self.values)

    def coarsen(self, factor: int) -> "VolatilityControl":
        """Steps merged in blocks; the merged volatility keeps Σh²Δt unchanged."""
        merged = np.sqrt(np.mean(self.values.reshape(-1, factor) ** 2, axis=1))
        merged = np.clip(merged, self.band.sigma_lo, self.band.sigma_hi)
        return VolatilityControl(self.kind, merged, self.band, self.label, self.switch_time)


def steps_for(dt: float, horizon: float) -> int:
    if dt <= 0 or horizon <= 0:
        raise ConfigurationError(f"need dt > 0 and T > 0, got dt={dt}, T={horizon}")
    n = round(horizon / dt)
    if n < 1 or abs(n * dt - horizon) > 1e-9 * horizon:
        raise ConfigurationError(f"dt={dt} does not divide T={horizon}")
    return n


def constant_control(sigma: float, band: VolatilityBand, n_steps: int, label: str | None = None) -> VolatilityControl:
    return VolatilityControl(
        ControlKind.constant, np.full(n_steps, float(sigma)), band, label or f"constant({sigma:g})"
    )


def bang_bang_control(
    first: float,
    second: float,
    switch_time: float,
    band: VolatilityBand,
    dt: float,
    horizon: float,
    label: str | None = None,
) -> VolatilityControl:
    n = steps_for(dt, horizon)
    switch = round(switch_time / dt)
    values = np.where(np.arange(n) < switch, first, second).astype(float)
    return VolatilityControl(
        ControlKind.bang_bang,
        values,
        band,
        label or f"bang-bang({first:g}->{second:g}@{switch_time:g})",
        switch_time=switch_time,
    )


def piecewise_random_control(
    band: VolatilityBand, n_steps: int, seed: int, label: str | None = None
) -> VolatilityControl:
    """One value per step drawn uniformly in the band; shared by every path of the control."""
    rng = np.random.default_rng(seed)
    values = rng.uniform(band.sigma_lo, band.sigma_hi, size=n_steps)
    return VolatilityControl(ControlKind.piecewise_random, values, band, label or f"random({seed})")


# ── Paths ───────────────────────────────────────────────


def path_stream(base_seed: int, path_index: int) -> np.random.Generator:
    """Counter-based stream for one (control, path); independent of scheduling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(base_seed, spawn_key=(path_index,))))


@dataclass(frozen=True)
class ScenarioPath:
    times: np.ndarray
    B: np.ndarray
    qv: np.ndarray
    control: VolatilityControl
    seed: int
    path_index: int = 0

    @property
    def scenario_id(self) -> str:
        return f"{self.control.label}#{self.path_index}"


@dataclass(frozen=True)
class PathBundle:
    """Paths of one control on a shared grid; ``B`` is (P, n+1), ``qv`` is (n+1,)."""

    control: VolatilityControl
    times: np.ndarray
    B: np.ndarray
    qv: np.ndarray
    base_seed: int
    path_indices: np.ndarray

    def __len__(self) -> int:
        return self.B.shape[0]

    @property
    def label(self) -> str:
        return self.control.label

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def scenario_ids(self) -> list[str]:
        return [f"{self.label}#{i}" for i in self.path_indices]

    def path(self, i: int) -> ScenarioPath:
        return ScenarioPath(self.times, self.B[i], self.qv, self.control, self.base_seed, int(self.path_indices[i]))

    def subset(self, mask: np.ndarray) -> "PathBundle":
        return PathBundle(self.control, self.times, self.B[mask], self.qv, self.base_seed, self.path_indices[mask])

    def with_B(self, B: np.ndarray) -> "PathBundle":
        if B.shape != self.B.shape:
            raise ShapeError(f"replacement paths have shape {B.shape}, expected {self.B.shape}")
        return PathBundle(self.control, self.times, B, self.qv, self.base_seed, self.path_indices)

    def coarsen(self, factor: int) -> "PathBundle":
        """Exact subsample every ``factor`` steps of the same paths."""
        n = len(self.times) - 1
        if factor < 1 or n % factor:
            raise ConfigurationError(f"coarsening factor {factor} does not divide {n} steps")
        if factor == 1:
            return self
        return PathBundle(
            self.control.coarsen(factor),
            self.times[::factor],
            self.B[:, ::factor],
            self.qv[::factor],
            self.base_seed,
            self.path_indices,
        )


def _check_control(control: VolatilityControl, n_steps: int) -> None:
    if control.n_steps != n_steps:
        raise ShapeError(f"control {control.label} has {control.n_steps} steps, grid has {n_steps}")


def _assemble(control: VolatilityControl, normals: np.ndarray, dt: float, n_steps: int):
    dB = control.values * math.sqrt(dt) * normals
    B = np.concatenate([np.zeros(normals.shape[:-1] + (1,)), np.cumsum(dB, axis=-1)], axis=-1)
    qv = np.concatenate([[0.0], np.cumsum(control.values**2 * dt)])
    times = np.arange(n_steps + 1) * dt
    return times, B, qv


def simulate_scenario(
    control: VolatilityControl, seed: int, dt: float, horizon: float, path_index: int = 0
) -> ScenarioPath:
    """B increments h_j√dt·ξ_j and qv increments h_j²dt on a uniform grid."""
    n = steps_for(dt, horizon)
    _check_control(control, n)
    normals = path_stream(seed, path_index).standard_normal(n)
    times, B, qv = _assemble(control, normals, dt, n)
    return ScenarioPath(times, B, qv, control, seed, path_index)


@dataclass(frozen=True)
class FamilyMember:
    control: VolatilityControl
    n_paths: int
    base_seed: int

    @property
    def label(self) -> str:
        return self.control.label


@dataclass(frozen=True)
class ScenarioFamily:
    members: tuple[FamilyMember, ...]
    dt: float
    horizon: float
    band: VolatilityBand

    def __post_init__(self):
        n = steps_for(self.dt, self.horizon)
        if not self.members:
            raise ConfigurationError("scenario family is empty")
        labels = [m.label for m in self.members]
        if len(set(labels)) != len(labels):
            raise ConfigurationError("scenario labels must be unique")
        for m in self.members:
            _check_control(m.control, n)
        constants = {
            float(m.control.values[0]) for m in self.members if m.control.kind == ControlKind.constant
        }
        if self.band.sigma_lo not in constants or self.band.sigma_hi not in constants:
            raise ConfigurationError("scenario family must contain the constant controls sigma_lo and sigma_hi")

    @property
    def n_steps(self) -> int:
        return steps_for(self.dt, self.horizon)

    @property
    def n_paths(self) -> int:
        return sum(m.n_paths for m in self.members)

    def with_paths(self, n_paths: int, seed_offset: int = 0) -> "ScenarioFamily":
        members = tuple(FamilyMember(m.control, n_paths, m.base_seed + seed_offset) for m in self.members)
        return ScenarioFamily(members, self.dt, self.horizon, self.band)

    def refine(self, factor: int) -> "ScenarioFamily":
        """Same family on a grid ``factor`` times finer (controls repeated per sub-step)."""
        members = tuple(
            FamilyMember(
                VolatilityControl(
                    m.control.kind,
                    np.repeat(m.control.values, factor),
                    m.control.band,
                    m.control.label,
                    m.control.switch_time,
                ),
                m.n_paths,
                m.base_seed,
            )
            for m in self.members
        )
        return ScenarioFamily(members, self.dt / factor, self.horizon, self.band)


def default_family(
    band: VolatilityBand,
    horizon: float,
    dt: float,
    paths_per_control: int,
    seed: int,
    n_bang_bang: int = 8,
    n_random: int = 8,
) -> ScenarioFamily:
    """Constant σ̲ and σ̄, bang-bang switches at jT/8 in both orientations, seeded random controls."""
    n = steps_for(dt, horizon)
    seeds = np.random.SeedSequence(seed).generate_state(2 + n_bang_bang + n_random)
    controls = [
        constant_control(band.sigma_lo, band, n, "constant-lo"),
        constant_control(band.sigma_hi, band, n, "constant-hi"),
    ]
    for j in range(n_bang_bang):
        switch = horizon * (j // 2 + 1) / 8
        first, second = (band.sigma_lo, band.sigma_hi) if j % 2 == 0 else (band.sigma_hi, band.sigma_lo)
        tag = "lo-hi" if j % 2 == 0 else "hi-lo"
        controls.append(bang_bang_control(first, second, switch, band, dt, horizon, f"bang-bang-{tag}@{switch:g}"))
    for j in range(n_random):
        controls.append(piecewise_random_control(band, n, int(seeds[2 + n_bang_bang + j]), f"random-{j}"))
    members = tuple(FamilyMember(c, paths_per_control, int(s)) for c, s in zip(controls, seeds))
    return ScenarioFamily(members, dt, horizon, band)


def simulate_bundle(
    member: FamilyMember, dt: float, horizon: float, path_indices: Sequence[int] | None = None
) -> PathBundle:
    n = steps_for(dt, horizon)
    _check_control(member.control, n)
    indices = np.arange(member.n_paths) if path_indices is None else np.asarray(path_indices, dtype=int)
    normals = np.empty((len(indices), n))
    for row, i in enumerate(indices):
        normals[row] = path_stream(member.base_seed, int(i)).standard_normal(n)
    times, B, qv = _assemble(member.control, normals, dt, n)
    return PathBundle(member.control, times, B, qv, member.base_seed, indices)


def simulate_family(family: ScenarioFamily) -> list[PathBundle]:
    return [simulate_bundle(m, family.dt, family.horizon) for m in family.members]


def qv_band_violations(bundle: PathBundle, band: VolatilityBand, tol: float = 1e-12) -> int:
    """Windows [t_i, t_j] whose qv increment leaves [(t_j − t_i)σ̲², (t_j − t_i)σ̄²]."""
    span = bundle.times[None, :] - bundle.times[:, None]
    inc = bundle.qv[None, :] - bundle.qv[:, None]
    upper = np.triu(np.ones_like(span, dtype=bool), k=1)
    scale = tol * max(1.0, float(bundle.qv[-1]))
    low = inc < span * band.var_lo - scale
    high = inc > span * band.var_hi + scale
    per_path = int(np.count_nonzero((low | high) & upper))
    return per_path * len(bundle)


# ── Integrals ───────────────────────────────────────────


def _left_points(eta, n_steps: int) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if eta.ndim == 0:
        return np.full(n_steps, float(eta))
    if eta.shape[-1] == n_steps + 1:
        return eta[..., :-1]
    if eta.shape[-1] == n_steps:
        return eta
    raise ShapeError(f"integrand has {eta.shape[-1]} points, grid has {n_steps} steps")


def _cumulative(increments: np.ndarray) -> np.ndarray:
    zeros = np.zeros(increments.shape[:-1] + (1,))
    return np.concatenate([zeros, np.cumsum(increments, axis=-1)], axis=-1)


def ito_integral(eta, path: ScenarioPath | PathBundle) -> np.ndarray:
    """∫_0^t η dB as Σ η_{t_j}(B_{t_{j+1}} − B_{t_j}), cumulative over the grid."""
    dB = np.diff(path.B, axis=-1)
    return _cumulative(_left_points(eta, dB.shape[-1]) * dB)


def qv_integral(eta, path: ScenarioPath | PathBundle) -> np.ndarray:
    """∫_0^t η d⟨B⟩ with the realized qv increments, cumulative over the grid."""
    dqv = np.diff(path.qv, axis=-1)
    left = _left_points(eta, dqv.shape[-1])
    return _cumulative(left * dqv)


def time_integral(eta, path: ScenarioPath | PathBundle) -> np.ndarray:
    ds = np.diff(path.times)
    return _cumulative(_left_points(eta, len(ds)) * ds)


# ── Upper expectation ───────────────────────────────────


@dataclass(frozen=True)
class UpperExpectation:
    """max over controls of the per-control mean; a lower bound of sup_P E^P."""

    estimate: float
    argmax: str
    means: dict[str, float]
    stderrs: dict[str, float]
    counts: dict[str, int]
    failures: dict[str, list[str]]

    @property
    def stderr(self) -> float:
        return self.stderrs[self.argmax]

    @property
    def n_failures(self) -> int:
        return sum(len(v) for v in self.failures.values())

    @classmethod
    def from_samples(cls, samples: dict[str, np.ndarray], ids: dict[str, list[str]] | None = None) -> "UpperExpectation":
        means, stderrs, counts, failures = {}, {}, {}, {}
        for label, values in samples.items():
            values = np.asarray(values, dtype=float)
            ok = np.isfinite(values)
            if not ok.all():
                names = ids[label] if ids else [f"{label}#{i}" for i in range(len(values))]
                failures[label] = [names[i] for i in np.flatnonzero(~ok)]
                logger.warning("%s: %d non-finite functional values", label, int((~ok).sum()))
            good = values[ok]
            counts[label] = len(good)
            if len(good) == 0:
                continue
            means[label] = float(np.mean(good))
            stderrs[label] = float(np.std(good, ddof=1) / math.sqrt(len(good))) if len(good) > 1 else math.inf
        if not means:
            raise ScenarioError("no finite functional values in any scenario")
        argmax = max(means, key=means.__getitem__)
        return cls(means[argmax], argmax, means, stderrs, counts, failures)


def upper_expectation(
    functional: Callable[[PathBundle], np.ndarray],
    family: ScenarioFamily,
    batch_size: int | None = None,
    max_workers: int | None = None,
) -> UpperExpectation:
    """Stream every control's paths in batches through ``functional`` (one value per path)."""
    batch = batch_size or settings.batch_size

    def member_values(member: FamilyMember) -> np.ndarray:
        chunks = []
        for start in range(0, member.n_paths, batch):
            indices = range(start, min(start + batch, member.n_paths))
            bundle = simulate_bundle(member, family.dt, family.horizon, indices)
            try:
                values = np.asarray(functional(bundle), dtype=float)
            except GLabError:
                raise
            except Exception as e:
                raise ScenarioError(f"functional failed on scenario {member.label}#{start}..{indices[-1]}: {e}") from e
            if values.shape != (len(bundle),):
                raise ShapeError(f"functional returned shape {values.shape} for {len(bundle)} paths")
            chunks.append(values)
        return np.concatenate(chunks)

    workers = max_workers or settings.threads
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(member_values, family.members))
    else:
        results = [member_values(m) for m in family.members]
    return UpperExpectation.from_samples({m.label: r for m, r in zip(family.members, results)})


def upper_expectation_of(values_by_bundle: Sequence[tuple[PathBundle, np.ndarray]]) -> UpperExpectation:
    """Upper expectation of per-path values already computed on simulated bundles."""
    samples: dict[str, list[np.ndarray]] = {}
    ids: dict[str, list[str]] = {}
    for bundle, values in values_by_bundle:
        samples.setdefault(bundle.label, []).append(np.asarray(values, dtype=float))
        ids.setdefault(bundle.label, []).extend(bundle.scenario_ids)
    return UpperExpectation.from_samples({k: np.concatenate(v) for k, v in samples.items()}, ids)
