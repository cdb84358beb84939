"""Deterministic constructions: the G function, path embedding, mollification, derivative ledger."""

import logging
import math

import numpy as np

from glab.errors import ConfigurationError, DomainError, ShapeError
from glab.models import (
    DerivativeLedger,
    EmbeddedPath,
    GeneratorSpec,
    Mollifier,
    PathGeneratorSpec,
    TerminalSpec,
    TimePartition,
    VolatilityBand,
)

logger = logging.getLogger(__name__)

DEFAULT_QUADRATURE_NODES = 16


def g_function(a, band: VolatilityBand):
    """G(a) = ½(σ̄²a⁺ − σ̲²a⁻), elementwise."""
    arr = np.asarray(a, dtype=float)
    out = 0.5 * (band.var_hi * np.maximum(arr, 0.0) - band.var_lo * np.maximum(-arr, 0.0))
    return float(out) if out.ndim == 0 else out


# ── Path embedding ──────────────────────────────────────


def embed_path(x, partition: TimePartition, t) -> EmbeddedPath:
    """Piecewise-linear path through the cumulative increments, stopped at t.

    With t in (t_{k-1}, t_k]: linear through Σ_{j≤i} x_j at t_i for i < k, then
    linear on [t_{k-1}, t] up to Σ_{j≤k} x_j and constant on [t, T].
    ``x`` may carry a batch on its leading axes; ``t`` broadcasts against it.
    """
    x = np.asarray(x, dtype=float)
    n = partition.n_intervals
    if x.ndim == 0 or x.shape[-1] != n:
        raise ShapeError(f"expected {n} increments on the last axis, got shape {x.shape}")
    t = np.asarray(t, dtype=float)
    horizon = partition.horizon
    if np.any(t < 0) or np.any(t > horizon):
        raise DomainError(f"stop time outside [0, {horizon}]")

    batch = np.broadcast_shapes(x.shape[:-1], t.shape)
    x = np.broadcast_to(x, batch + (n,))
    t = np.broadcast_to(t, batch)

    knots = np.asarray(partition.times)
    sums = np.concatenate([np.zeros(batch + (1,)), np.cumsum(x, axis=-1)], axis=-1)
    k = np.maximum(np.searchsorted(knots, t, side="left"), 1)
    before = np.arange(n + 1) < k[..., None]
    times = np.where(before, knots, t[..., None])
    s_k = np.take_along_axis(sums, k[..., None], axis=-1)
    values = np.where(before, sums, s_k)
    return EmbeddedPath(times=times, values=values, stop=t, horizon=horizon)


def discretize_path_generator(h: PathGeneratorSpec, partition: TimePartition) -> GeneratorSpec:
    """f̄(t, x, y, z) := h(t, ω^{x,t}, y, z) on the increments of ``partition``."""

    if h.markovian and h.eval_current is not None:
        def evaluate(t, x, y, z):
            return h.eval_current(t, np.sum(x, axis=-1), y, z)
    else:
        def evaluate(t, x, y, z):
            return h.eval(t, embed_path(x, partition, t), y, z)

    return GeneratorSpec(
        eval=evaluate,
        n_vars=partition.n_intervals,
        m0=h.m0,
        l_y=h.l_y,
        l_z=h.l_z,
        l_x=h.l_path,
        modulus=h.modulus,
        name=f"{h.name}@{partition.n_intervals}",
        reduction="sum" if h.markovian else "none",
    )


# ── Mollification ───────────────────────────────────────


def _bump(r2: np.ndarray) -> np.ndarray:
    inside = r2 < 1.0
    out = np.zeros_like(r2)
    out[inside] = np.exp(1.0 / (r2[inside] - 1.0))
    return out


def build_mollifier(n: int, dim: int, nodes_per_axis: int = DEFAULT_QUADRATURE_NODES) -> Mollifier:
    """Tensor Gauss–Legendre rule for the bump kernel on the 1/n-ball, normalized to total mass 1."""
    if n < 1 or dim < 1:
        raise ConfigurationError(f"mollifier needs n >= 1 and dim >= 1, got n={n}, dim={dim}")
    if nodes_per_axis < 2:
        raise ConfigurationError(f"need at least 2 quadrature nodes per axis, got {nodes_per_axis}")
    ref_nodes, ref_weights = np.polynomial.legendre.leggauss(nodes_per_axis)
    grids = np.meshgrid(*([ref_nodes] * dim), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    w = np.ones(len(points))
    for axis_weights in np.meshgrid(*([ref_weights] * dim), indexing="ij"):
        w = w * axis_weights.ravel()
    w = w * _bump(np.sum(points**2, axis=-1))
    keep = w > 0
    total = w[keep].sum()
    if not keep.any() or total <= 0 or not math.isfinite(total):
        raise ConfigurationError(f"mollifier quadrature underflow (n={n}, dim={dim})")
    return Mollifier(
        n=n,
        dim=dim,
        nodes=points[keep] / n,
        weights=w[keep] / total,
        nodes_per_axis=nodes_per_axis,
    )


def _check_kernel(rho: Mollifier, dim: int, what: str) -> None:
    if rho.dim != dim:
        raise ConfigurationError(f"{what} mollifier must have dim {dim}, got {rho.dim}")
    if rho.size == 0 or not rho.is_normalized():
        raise ConfigurationError(f"{what} mollifier is not normalized")


def mollify_generator_yz(f: GeneratorSpec, rho: Mollifier) -> GeneratorSpec:
    """f^n(t, x, y, z) = Σ_q w_q f(t, x, y − ỹ_q, z − z̃_q)."""
    _check_kernel(rho, 2, "(y, z)")
    dy, dz, w = rho.nodes[:, 0], rho.nodes[:, 1], rho.weights

    def evaluate(t, x, y, z):
        t = np.asarray(t)[..., None]
        x = np.asarray(x)[..., None, :]
        y = np.asarray(y)[..., None] - dy
        z = np.asarray(z)[..., None] - dz
        return f(t, x, y, z) @ w

    r = rho.radius
    return f.replace(
        eval=evaluate,
        m0=f.m0 + r * (f.l_y + f.l_z * (1.0 + r)),
        name=f"{f.name}*yz{rho.n}",
    )


def mollify_generator_tx(f: GeneratorSpec, rho: Mollifier, horizon: float | None = None) -> GeneratorSpec:
    """f̂^n(t, x, y, z) = Σ_q w_q f(t − t̃_q, x − x̃_q, y, z).

    Times are clamped to [0, horizon]: f(t) = f(0) for t < 0 and f(t) = f(horizon) beyond it.
    Sum-reduced generators take a two-dimensional kernel on (t, Σx).
    """
    summed = f.reduction == "sum"
    dim = 2 if summed else f.n_vars + 1
    _check_kernel(rho, dim, "(t, x)")
    dt = rho.nodes[:, 0]
    w = rho.weights
    upper = np.inf if horizon is None else horizon

    def shifted_state(x):
        x = np.asarray(x, dtype=float)
        if summed:
            return (np.sum(x, axis=-1)[..., None] - rho.nodes[:, 1])[..., None]
        return x[..., None, :] - rho.nodes[:, 1:]

    def evaluate(t, x, y, z):
        ts = np.clip(np.asarray(t)[..., None] - dt, 0.0, upper)
        return f(ts, shifted_state(x), np.asarray(y)[..., None], np.asarray(z)[..., None]) @ w

    spread = float(np.sum(f.modulus(rho.radius)))
    return f.replace(
        eval=evaluate,
        m0=f.m0 + dim * spread,
        name=f"{f.name}*tx{rho.n}",
    )


def mollification_gap_bound(f: GeneratorSpec, n: int, m_z: float, dims: int) -> float:
    """(1/n)(L_y + 2L_z(M_z + 1)) + dims·w(1/n), the uniform gap of both mollification steps."""
    return (f.l_y + 2.0 * f.l_z * (m_z + 1.0)) / n + dims * float(np.sum(f.modulus(1.0 / n)))


def truncate_generator_z(f: GeneratorSpec, cap: float) -> GeneratorSpec:
    """h(t, x, y, (|z| ∧ m)/|z|·z)."""
    if cap <= 0:
        raise DomainError(f"z truncation level must be positive, got {cap}")

    def evaluate(t, x, y, z):
        return f(t, x, y, np.clip(z, -cap, cap))

    return f.replace(eval=evaluate, name=f"{f.name}|z<={cap:.4g}")


def shifted_generator(f: GeneratorSpec, delta: float) -> GeneratorSpec:
    def evaluate(t, x, y, z):
        return f(t, x, y, z) + delta

    return f.replace(eval=evaluate, m0=f.m0 + abs(delta), name=f"{f.name}{delta:+.4g}")


def shifted_terminal(phi: TerminalSpec, delta: float) -> TerminalSpec:
    return TerminalSpec(
        phi=lambda x: phi(x) + delta,
        n_vars=phi.n_vars,
        bound=phi.bound + abs(delta),
        lipschitz=phi.lipschitz,
        name=f"{phi.name}{delta:+.4g}",
        reduction=phi.reduction,
    )


# ── Derivative ledger ───────────────────────────────────


def derivative_bound_ledger(
    phi_lip: float,
    l_x: float,
    l_y: float,
    band: VolatilityBand,
    partition: TimePartition,
) -> DerivativeLedger:
    """L^N anchored at L^φ, then L^k = (L^{k+1} + l_x/l_y)·exp(σ̄²l_yΔt_k) − l_x/l_y for decreasing k.

    Written as L^k = L^{k+1}e^a + σ̄²l_xΔt_k(e^a − 1)/a with a = σ̄²l_yΔt_k, which is
    L^{k+1} + σ̄²l_xΔt_k in the limit l_y = 0.
    """
    if phi_lip < 0 or l_x < 0 or l_y < 0:
        raise DomainError(f"ledger constants must be >= 0 (L^phi={phi_lip}, l_x={l_x}, l_y={l_y})")
    gaps = partition.gaps
    bounds = [0.0] * partition.n_intervals
    current = float(phi_lip)
    for k in range(partition.n_intervals, 0, -1):
        gap = float(gaps[k - 1])
        a = band.var_hi * l_y * gap
        spread = math.expm1(a) / a if a > 0 else 1.0
        current = current * math.exp(a) + band.var_hi * l_x * gap * spread
        bounds[k - 1] = current
    return DerivativeLedger(bounds=tuple(bounds), phi_lipschitz=phi_lip, l_x=l_x, l_y=l_y)


def y_ceiling(m0: float, l_y: float, band: VolatilityBand, horizon: float) -> float:
    """Sanity ceiling M₀(1 + σ̄²T)e^{σ̄²L_yT} for |u|."""
    return m0 * (1.0 + band.var_hi * horizon) * math.exp(band.var_hi * l_y * horizon)
