"""Estimators for BMO norms, Doléans exponentials, Girsanov shifts, linearization and stability.

Stopping times are replaced by deterministic grid times and conditional
expectations at τ by quantile buckets of B_τ on the forward paths, so every
norm reported here is a lower bound of the quantity it estimates.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from glab.errors import ConfigurationError, ShapeError
from glab.models import GeneratorSpec, TerminalSpec, TimePartition, VolatilityBand
from glab.schemas import GridConfig
from glab.services import gcore
from glab.services.cascade import (
    CascadeSolution,
    SolutionTriplePaths,
    build_solution_paths,
    path_states,
    solve_cascade,
)
from glab.services.scenarios import (
    PathBundle,
    ScenarioPath,
    UpperExpectation,
    ito_integral,
    qv_integral,
    upper_expectation_of,
)

logger = logging.getLogger(__name__)

BMO_NOTE = "stopping times replaced by deterministic grid times; the value is a lower bound of the norm"


# ── BMO ─────────────────────────────────────────────────


@dataclass(frozen=True)
class BmoEstimate:
    value: float
    eval_times: tuple[float, ...]
    per_control: dict[str, float]
    per_time: dict[str, list[float]]
    argmax: tuple[str, float]
    small_buckets: int = 0
    note: str = BMO_NOTE


def grid_eval_times(times: np.ndarray, count: int) -> tuple[float, ...]:
    """``count`` grid times spread over [0, T)."""
    n = len(times) - 1
    idx = np.unique(np.floor(np.arange(count) * n / count).astype(int))
    return tuple(float(times[i]) for i in idx)


def _as_series(Z, bundle: PathBundle) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 0:
        return np.full(bundle.B.shape, float(Z))
    if Z.shape != bundle.B.shape:
        raise ShapeError(f"Z has shape {Z.shape}, paths of {bundle.label} have {bundle.B.shape}")
    return Z


def bmo_norm(
    Z: Sequence[np.ndarray] | float,
    bundles: Sequence[PathBundle],
    eval_times: Sequence[float] | None = None,
    n_buckets: int = 8,
    min_bucket_size: int = 20,
) -> BmoEstimate:
    """max over controls and τ of |E^P[∫_τ^T Z² d⟨B⟩ | B_τ]| with bucketed conditioning."""
    if not bundles:
        raise ConfigurationError("bmo_norm needs at least one bundle")
    series = [Z] * len(bundles) if np.ndim(Z) == 0 else list(Z)
    if len(series) != len(bundles):
        raise ShapeError(f"{len(series)} Z blocks for {len(bundles)} bundles")
    times = bundles[0].times
    eval_times = tuple(eval_times) if eval_times is not None else grid_eval_times(times, 8)
    dt = float(times[1] - times[0])

    per_control: dict[str, float] = {}
    per_time: dict[str, list[float]] = {}
    small = 0
    for z, bundle in zip(series, bundles):
        z = _as_series(z, bundle)
        energy = z[:, :-1] ** 2 * np.diff(bundle.qv)
        tail = np.concatenate([np.cumsum(energy[:, ::-1], axis=1)[:, ::-1], np.zeros((len(bundle), 1))], axis=1)
        values = []
        for tau in eval_times:
            j = int(round(tau / dt))
            if j < 0 or j >= len(bundle.times) or abs(bundle.times[j] - tau) > 1e-9:
                raise ConfigurationError(f"evaluation time {tau} is not on the scenario grid")
            if j == 0:
                groups = [np.arange(len(bundle))]
            else:
                order = np.argsort(bundle.B[:, j], kind="stable")
                groups = np.array_split(order, min(n_buckets, len(bundle)))
            if min(len(g) for g in groups) < min_bucket_size:
                small += 1
            values.append(max(abs(float(np.mean(tail[g, j]))) for g in groups))
        per_time[bundle.label] = values
        per_control[bundle.label] = max(values) if values else 0.0
    if small:
        logger.warning("bmo_norm: %d (control, time) pairs with buckets below %d paths", small, min_bucket_size)
    label = max(per_control, key=per_control.__getitem__)
    tau = eval_times[int(np.argmax(per_time[label]))]
    return BmoEstimate(
        value=per_control[label],
        eval_times=eval_times,
        per_control=per_control,
        per_time=per_time,
        argmax=(label, tau),
        small_buckets=small,
    )


# ── Doléans exponential and Girsanov ────────────────────


@dataclass(frozen=True)
class DoleansExponential:
    values: np.ndarray
    overflowed: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.values[..., -1]

    @property
    def excluded(self) -> int:
        return int(np.count_nonzero(self.overflowed))


def doleans_exponential(Z, path: ScenarioPath | PathBundle) -> DoleansExponential:
    """exp(∫Z dB − ½∫Z² d⟨B⟩); paths that overflow are set to NaN and counted."""
    Z = np.asarray(Z, dtype=float)
    exponent = ito_integral(Z, path) - 0.5 * qv_integral(Z**2, path)
    with np.errstate(over="ignore", invalid="ignore"):
        values = np.exp(exponent)
    overflowed = ~np.all(np.isfinite(values), axis=-1)
    if np.any(overflowed):
        values = values.copy()
        values[overflowed] = np.nan
        logger.warning("Doléans exponential overflowed on %d paths; excluded", int(np.count_nonzero(overflowed)))
    return DoleansExponential(values=values, overflowed=np.asarray(overflowed))


def girsanov_shift(path: ScenarioPath | PathBundle, Z) -> ScenarioPath | PathBundle:
    """B̃ = B − ∫Z d⟨B⟩; the quadratic variation is carried over unchanged."""
    shifted = path.B - qv_integral(Z, path)
    if isinstance(path, PathBundle):
        return path.with_B(shifted)
    return dataclasses.replace(path, B=shifted)


def tilted_means(values: np.ndarray, weights: np.ndarray) -> float:
    ok = np.isfinite(weights) & np.isfinite(values)
    total = float(np.sum(weights[ok]))
    return float(np.sum(weights[ok] * values[ok]) / total) if total > 0 else math.nan


def tilted_mean_stderr(values: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """Self-normalized weighted mean and its delta-method standard error."""
    ok = np.isfinite(weights) & np.isfinite(values)
    w, v = weights[ok], values[ok]
    if len(w) < 2 or np.sum(w) <= 0:
        return math.nan, math.inf
    mean = float(np.sum(w * v) / np.sum(w))
    stderr = float(np.sqrt(np.mean(w**2 * (v - mean) ** 2)) / (np.mean(w) * math.sqrt(len(w))))
    return mean, stderr


@dataclass(frozen=True)
class TiltReport:
    estimate: float
    argmax: str
    weighted_means: dict[str, float]
    max_terminal_K: float
    excluded: int

    def passed(self, eps: float) -> bool:
        return -eps <= self.estimate <= eps and self.max_terminal_K <= eps


def decreasing_martingale_under_tilt(paths: SolutionTriplePaths, tilt=None) -> TiltReport:
    """sup over controls of the E(Z)_T-weighted mean of K_T; ``tilt`` defaults to the cascade Z."""
    means, excluded, top = {}, 0, -math.inf
    for block in paths.blocks:
        Z = block.Z if tilt is None else tilt
        dol = doleans_exponential(Z, block.bundle)
        excluded += dol.excluded
        means[block.label] = tilted_means(block.K[:, -1], dol.terminal)
        top = max(top, float(np.max(block.K[:, -1])))
    finite = {k: v for k, v in means.items() if math.isfinite(v)}
    label = max(finite, key=finite.__getitem__)
    return TiltReport(finite[label], label, means, top, excluded)


# ── Linearization ───────────────────────────────────────


def tent(x: np.ndarray, eps: float) -> np.ndarray:
    """1 on [−ε, ε], 0 outside [−2ε, 2ε], linear in between."""
    return np.clip(2.0 - np.abs(x) / eps, 0.0, 1.0)


@dataclass(frozen=True)
class Linearization:
    """â, b̂, m̂, ĥ per path and grid time, one block per bundle."""

    a_hat: list[np.ndarray]
    b_hat: list[np.ndarray]
    m_hat: list[np.ndarray]
    h_hat: list[np.ndarray]
    eps: float
    violations: dict[str, int]
    worst_ratios: dict[str, float]

    @property
    def bounds_hold(self) -> bool:
        return not any(self.violations.values())


def _same_paths(paths1: SolutionTriplePaths, paths2: SolutionTriplePaths) -> None:
    if paths1.partition != paths2.partition or len(paths1.blocks) != len(paths2.blocks):
        raise ConfigurationError("runs use different partitions or scenario sets")
    for b1, b2 in zip(paths1.blocks, paths2.blocks):
        if b1.bundle.B.shape != b2.bundle.B.shape or b1.label != b2.label:
            raise ConfigurationError(f"runs disagree on scenario {b1.label}")
        if not np.array_equal(b1.bundle.path_indices, b2.bundle.path_indices):
            raise ConfigurationError(f"runs kept different paths of {b1.label}")


def linearization_coefficients(
    paths1: SolutionTriplePaths,
    paths2: SolutionTriplePaths,
    h1: GeneratorSpec,
    eps: float = 1e-3,
    h2: GeneratorSpec | None = None,
) -> Linearization:
    """h¹(Y¹, Z¹) − h¹(Y², Z²) = âŶ + b̂Ẑ + m̂, with the cutoff ``tent`` keeping quotients bounded."""
    _same_paths(paths1, paths2)
    a_list, b_list, m_list, h_list = [], [], [], []
    violations = {"a": 0, "b": 0, "m": 0}
    worst = {"a": 0.0, "b": 0.0, "m": 0.0}
    for b1, b2 in zip(paths1.blocks, paths2.blocks):
        t = b1.bundle.times
        X = path_states(b1.bundle, paths1.partition, paths1.mode)
        Y1, Z1, Y2, Z2 = b1.Y, b1.Z, b2.Y, b2.Z
        dY, dZ = Y1 - Y2, Z1 - Z2
        lY, lZ = tent(dY, eps), tent(dZ, eps)
        h_11 = h1(t, X, Y1, Z1)
        h_21 = h1(t, X, Y2, Z1)
        h_22 = h1(t, X, Y2, Z2)
        a = np.where(dY != 0, (1 - lY) * (h_11 - h_21) / np.where(dY != 0, dY, 1.0), 0.0)
        b = np.where(dZ != 0, (1 - lZ) * (h_21 - h_22) / np.where(dZ != 0, dZ, 1.0), 0.0)
        m = lY * (h_11 - h_21) + lZ * (h_21 - h_22)
        h_hat = h_22 - h2(t, X, Y2, Z2) if h2 is not None else np.zeros_like(Y2)

        limits = {
            "a": np.full_like(a, h1.l_y),
            "b": h1.l_z * (1 + np.abs(Z1) + np.abs(Z2)),
            "m": 2 * eps * (h1.l_y + h1.l_z * (1 + 2 * eps + 2 * np.abs(Z1))),
        }
        for key, coef in (("a", a), ("b", b), ("m", m)):
            excess = np.abs(coef) - limits[key]
            slack = 1e-10 * (1 + limits[key])
            violations[key] += int(np.count_nonzero(excess > slack))
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(limits[key] > 0, np.abs(coef) / limits[key], 0.0)
            worst[key] = max(worst[key], float(np.max(ratio)))
        a_list.append(a)
        b_list.append(b)
        m_list.append(m)
        h_list.append(h_hat)
    if any(violations.values()):
        logger.warning("linearization bounds violated: %s", violations)
    return Linearization(a_list, b_list, m_list, h_list, eps, violations, worst)


# ── A priori estimates ──────────────────────────────────


@dataclass(frozen=True)
class AprioriReport:
    sup_y: float
    bmo: BmoEstimate
    k_moments: dict[float, UpperExpectation]
    bounded: bool
    reference: dict[str, float] = field(default_factory=dict)

    @property
    def finite(self) -> bool:
        values = [self.sup_y, self.bmo.value, *(m.estimate for m in self.k_moments.values())]
        return all(math.isfinite(v) for v in values)


def apriori_report(
    paths: SolutionTriplePaths,
    p_list: Sequence[float] = (1.0, 2.0),
    bounded: bool = True,
    n_eval_times: int = 8,
    n_buckets: int = 8,
) -> AprioriReport:
    """sup-path |Y|, the BMO estimate of Z and Ê[|K_T|^p] for each p."""
    if not bounded:
        logger.warning("terminal is unbounded; sup|Y| is reported without a bound check")
    sup_y = max(float(np.max(np.abs(b.Y))) for b in paths.blocks)
    bmo = bmo_norm(
        [b.Z for b in paths.blocks],
        paths.bundles,
        grid_eval_times(paths.times, n_eval_times),
        n_buckets=n_buckets,
    )
    moments = {
        float(p): upper_expectation_of([(b.bundle, np.abs(b.K[:, -1]) ** p) for b in paths.blocks]) for p in p_list
    }
    return AprioriReport(sup_y=sup_y, bmo=bmo, k_moments=moments, bounded=bounded)


def compare_apriori(report: AprioriReport, reference: AprioriReport, sigmas: float, rel: float) -> dict[str, bool]:
    """Agreement of two a priori reports built on different path counts."""
    out = {
        "sup_y": abs(report.sup_y - reference.sup_y) <= rel * max(abs(reference.sup_y), 1e-12) + 1e-12,
        "bmo": abs(report.bmo.value - reference.bmo.value) <= rel * max(reference.bmo.value, 1e-12) + 1e-12,
    }
    for p, est in report.k_moments.items():
        ref = reference.k_moments[p]
        err = sigmas * math.hypot(est.stderr, ref.stderr)
        out[f"k_moment_{p:g}"] = abs(est.estimate - ref.estimate) <= err + rel * abs(ref.estimate) + 1e-12
    return out


# ── Stability ───────────────────────────────────────────


@dataclass(frozen=True)
class StabilityRun:
    cascade: CascadeSolution
    paths: SolutionTriplePaths


@dataclass(frozen=True)
class StabilityReport:
    sup_y_gap: float
    z_gap: float
    terminal_gap: float
    generator_gap: float
    ceiling: float
    delta: float | None = None

    @property
    def ratio(self) -> float:
        return self.sup_y_gap / self.ceiling if self.ceiling > 0 else (0.0 if self.sup_y_gap == 0 else math.inf)


def stability_gap(run1: StabilityRun, run2: StabilityRun, eps: float = 1e-3, delta: float | None = None) -> StabilityReport:
    """Gaps between two runs on the same discretization and paths.

    The generator gap is the tilted Ẽ[∫|h¹ − h²|(Y², Z²) d⟨B⟩] with tilt b̂ from the
    linearization; the ceiling is e^{2σ̄²L_yT}(terminal gap + generator gap).
    """
    c1, c2 = run1.cascade, run2.cascade
    if c1.partition != c2.partition or c1.grid != c2.grid or c1.band != c2.band or c1.mode != c2.mode:
        raise ConfigurationError("stability runs use different discretizations")
    _same_paths(run1.paths, run2.paths)
    lin = linearization_coefficients(run1.paths, run2.paths, c1.generator, eps, c2.generator)

    sup_y = 0.0
    terminal_gap = 0.0
    z_samples, h_samples = [], []
    for i, (b1, b2) in enumerate(zip(run1.paths.blocks, run2.paths.blocks)):
        bundle = b1.bundle
        sup_y = max(sup_y, float(np.max(np.abs(b1.Y - b2.Y))))
        X_T = path_states(bundle, c1.partition, c1.mode)[:, -1, :]
        terminal_gap = max(terminal_gap, float(np.max(np.abs(c1.terminal(X_T) - c2.terminal(X_T)))))
        ds = np.diff(bundle.times)
        z_samples.append((bundle, np.sum((b1.Z - b2.Z)[:, :-1] ** 2 * ds, axis=1)))
        weights = doleans_exponential(lin.b_hat[i], bundle).terminal
        h_int = qv_integral(np.abs(lin.h_hat[i]), bundle)[:, -1]
        h_samples.append((bundle, weights, h_int))

    z_gap = upper_expectation_of(z_samples).estimate
    per_control: dict[str, list] = {}
    for bundle, w, v in h_samples:
        per_control.setdefault(bundle.label, []).append((w, v))
    generator_gap = max(
        tilted_means(np.concatenate([v for _, v in items]), np.concatenate([w for w, _ in items]))
        for items in per_control.values()
    )
    l_y = max(c1.generator.l_y, c2.generator.l_y)
    growth = math.exp(2 * c1.band.var_hi * l_y * c1.partition.horizon)
    return StabilityReport(
        sup_y_gap=sup_y,
        z_gap=z_gap,
        terminal_gap=terminal_gap,
        generator_gap=generator_gap,
        ceiling=growth * (terminal_gap + generator_gap),
        delta=delta,
    )


@dataclass(frozen=True)
class StabilitySweep:
    kind: str
    reports: list[StabilityReport]

    def _pairs(self):
        ordered = sorted(self.reports, key=lambda r: -r.delta)
        return list(zip(ordered, ordered[1:]))

    def y_monotone(self, slack: float = 1e-9) -> bool:
        return all(b.sup_y_gap <= a.sup_y_gap + slack for a, b in self._pairs())

    def z_monotone(self, slack: float = 1e-9) -> bool:
        return all(b.z_gap <= a.z_gap + slack for a, b in self._pairs())

    def proportional(self, rel: float = 0.1, slack: float = 1e-6) -> bool:
        """gap(δ') ≤ gap(δ)·δ'/δ·(1 + rel) for consecutive scales δ' < δ."""
        return all(
            b.sup_y_gap <= a.sup_y_gap * (b.delta / a.delta) * (1 + rel) + slack for a, b in self._pairs()
        )

    def within_ceiling(self, tol: float) -> bool:
        return all(r.sup_y_gap <= r.ceiling + tol for r in self.reports)


def stability_sweep(
    f: GeneratorSpec,
    phi: TerminalSpec,
    partition: TimePartition,
    band: VolatilityBand,
    grid_config: GridConfig,
    bundles: Sequence[PathBundle],
    deltas: Sequence[float],
    kind: Literal["terminal", "generator"] = "terminal",
    eps: float = 1e-3,
) -> StabilitySweep:
    """stability_gap against shifted copies φ + δ (or f + δ) for each scale δ."""
    base_cas = solve_cascade(f, phi, partition, band, grid_config)
    base = StabilityRun(base_cas, build_solution_paths(base_cas, bundles))
    reports = []
    for delta in deltas:
        if kind == "terminal":
            cas = solve_cascade(f, gcore.shifted_terminal(phi, delta), partition, band, grid_config)
        elif kind == "generator":
            cas = solve_cascade(gcore.shifted_generator(f, delta), phi, partition, band, grid_config)
        else:
            raise ConfigurationError(f"unknown perturbation kind {kind!r}")
        run = StabilityRun(cas, build_solution_paths(cas, bundles))
        report = stability_gap(base, run, eps, delta=delta)
        logger.info("stability %s delta=%g: sup-Y gap %.4g, ceiling %.4g", kind, delta, report.sup_y_gap, report.ceiling)
        reports.append(report)
    return StabilitySweep(kind, reports)
