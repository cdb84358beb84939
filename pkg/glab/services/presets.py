"""Named generator, terminal and path-generator presets.

Every factory takes the number of increments first and preset parameters as
keywords; config files select them by id (``{"preset": "linear-y", "params": {...}}``).
"""

import math
from typing import Callable

import numpy as np

from glab.errors import ConfigurationError
from glab.models import (
    GeneratorSpec,
    HolderModulus,
    LinearModulus,
    PathGeneratorSpec,
    TerminalSpec,
    VolatilityBand,
)
from glab.services.expressions import generator_from_expression, terminal_from_expression

GENERATOR_PRESETS: dict[str, Callable[..., GeneratorSpec]] = {}
TERMINAL_PRESETS: dict[str, Callable[..., TerminalSpec]] = {}
PATH_GENERATOR_PRESETS: dict[str, Callable[..., PathGeneratorSpec]] = {}


def _register(registry: dict, name: str):
    def decorator(fn):
        registry[name] = fn
        return fn

    return decorator


def _build(registry: dict, kind: str, preset: str, n_vars: int | None, params: dict | None):
    if preset not in registry:
        raise ConfigurationError(f"unknown {kind} preset {preset!r} (known: {', '.join(sorted(registry))})")
    args = () if n_vars is None else (n_vars,)
    try:
        return registry[preset](*args, **(params or {}))
    except TypeError as e:
        raise ConfigurationError(f"bad parameters for {kind} preset {preset!r}: {e}") from e


def build_generator(preset: str, n_vars: int, params: dict | None = None) -> GeneratorSpec:
    return _build(GENERATOR_PRESETS, "generator", preset, n_vars, params)


def build_terminal(preset: str, n_vars: int, params: dict | None = None) -> TerminalSpec:
    return _build(TERMINAL_PRESETS, "terminal", preset, n_vars, params)


def build_path_generator(preset: str, params: dict | None = None) -> PathGeneratorSpec:
    return _build(PATH_GENERATOR_PRESETS, "path generator", preset, None, params)


# ── Generators ──────────────────────────────────────────


@_register(GENERATOR_PRESETS, "zero")
def zero_generator(n_vars: int) -> GeneratorSpec:
    return GeneratorSpec(
        eval=lambda t, x, y, z: 0.0,
        n_vars=n_vars, m0=0.0, l_y=0.0, l_z=0.0, name="zero", reduction="sum",
    )


@_register(GENERATOR_PRESETS, "constant")
def constant_generator(n_vars: int, c: float = 0.3) -> GeneratorSpec:
    return GeneratorSpec(
        eval=lambda t, x, y, z: c,
        n_vars=n_vars, m0=abs(c), l_y=0.0, l_z=0.0, name=f"constant({c:g})", reduction="sum",
    )


@_register(GENERATOR_PRESETS, "linear-y")
def linear_y_generator(n_vars: int, alpha: float = 0.5, c: float = 0.0) -> GeneratorSpec:
    return GeneratorSpec(
        eval=lambda t, x, y, z: alpha * y + c,
        n_vars=n_vars, m0=abs(c), l_y=abs(alpha), l_z=0.0, name=f"linear-y({alpha:g})", reduction="sum",
    )


@_register(GENERATOR_PRESETS, "lipschitz-random")
def lipschitz_random_generator(n_vars: int, seed: int = 7, scale: float = 0.5) -> GeneratorSpec:
    """a·sin(y + p) + b·tanh(z) + c·cos(Σx + t) with coefficients drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    a, b, c = scale * rng.uniform(0.2, 1.0, size=3)
    p = float(rng.uniform(0.0, 2 * math.pi))

    def evaluate(t, x, y, z):
        return a * np.sin(y + p) + b * np.tanh(z) + c * np.cos(np.sum(x, axis=-1) + t)

    return GeneratorSpec(
        eval=evaluate,
        n_vars=n_vars,
        m0=a + c,
        l_y=a,
        l_z=b,
        l_x=c,
        modulus=LinearModulus(c),
        name=f"lipschitz-random({seed})",
        reduction="sum",
    )


@_register(GENERATOR_PRESETS, "quadratic-z")
def quadratic_z_generator(n_vars: int, kappa: float = 0.25, alpha: float = 0.0) -> GeneratorSpec:
    # |κz₁² − κz₂²| ≤ κ(|z₁| + |z₂|)|z₁ − z₂|
    return GeneratorSpec(
        eval=lambda t, x, y, z: kappa * z**2 + alpha * y,
        n_vars=n_vars, m0=0.0, l_y=abs(alpha), l_z=abs(kappa), name=f"quadratic-z({kappa:g})", reduction="sum",
    )


@_register(GENERATOR_PRESETS, "expression")
def expression_generator(
    n_vars: int,
    expr: str = "0",
    m0: float = 0.0,
    l_y: float = 0.0,
    l_z: float = 0.0,
    l_x: float = 0.0,
    reduction: str = "none",
) -> GeneratorSpec:
    return generator_from_expression(expr, n_vars, m0=m0, l_y=l_y, l_z=l_z, l_x=l_x, reduction=reduction)


# ── Terminals ───────────────────────────────────────────


def _total(x: np.ndarray) -> np.ndarray:
    return np.sum(x, axis=-1)


@_register(TERMINAL_PRESETS, "zero")
def zero_terminal(n_vars: int) -> TerminalSpec:
    return constant_terminal(n_vars, 0.0)


@_register(TERMINAL_PRESETS, "constant")
def constant_terminal(n_vars: int, value: float = 0.0) -> TerminalSpec:
    return TerminalSpec(
        phi=lambda x: np.full(x.shape[:-1], value),
        n_vars=n_vars, bound=abs(value), lipschitz=0.0, name=f"constant({value:g})", reduction="sum",
    )


@_register(TERMINAL_PRESETS, "affine")
def affine_terminal(n_vars: int, coefficients: list[float] | None = None, offset: float = 0.0) -> TerminalSpec:
    """offset + Σ a_i x_i; with no coefficients the identity on the running sum."""
    if coefficients is None:
        coef = np.ones(n_vars)
    else:
        coef = np.asarray(coefficients, dtype=float)
        if coef.shape != (n_vars,):
            raise ConfigurationError(f"affine terminal needs {n_vars} coefficients, got {len(coef)}")
    uniform = bool(np.all(coef == coef[0]))
    return TerminalSpec(
        phi=lambda x: offset + x @ coef,
        n_vars=n_vars,
        bound=math.inf if np.any(coef != 0) else abs(offset),
        lipschitz=float(np.max(np.abs(coef))),
        name="affine",
        reduction="sum" if uniform else "none",
    )


@_register(TERMINAL_PRESETS, "quad-convex")
def quad_convex_terminal(n_vars: int) -> TerminalSpec:
    return TerminalSpec(
        phi=lambda x: _total(x) ** 2, n_vars=n_vars, bound=math.inf, lipschitz=math.inf,
        name="quad-convex", reduction="sum",
    )


@_register(TERMINAL_PRESETS, "quad-concave")
def quad_concave_terminal(n_vars: int) -> TerminalSpec:
    return TerminalSpec(
        phi=lambda x: -_total(x) ** 2, n_vars=n_vars, bound=math.inf, lipschitz=math.inf,
        name="quad-concave", reduction="sum",
    )


@_register(TERMINAL_PRESETS, "exp-clamped")
def exp_clamped_terminal(n_vars: int, cap: float = 5.0) -> TerminalSpec:
    return TerminalSpec(
        phi=lambda x: np.exp(np.clip(_total(x), -cap, cap)),
        n_vars=n_vars, bound=math.exp(cap), lipschitz=math.exp(cap),
        name=f"exp-clamped({cap:g})", reduction="sum",
    )


@_register(TERMINAL_PRESETS, "clamped-identity")
def clamped_identity_terminal(n_vars: int, cap: float = 1.0) -> TerminalSpec:
    return TerminalSpec(
        phi=lambda x: np.clip(_total(x), -cap, cap),
        n_vars=n_vars, bound=cap, lipschitz=1.0, name=f"clamped-identity({cap:g})", reduction="sum",
    )


@_register(TERMINAL_PRESETS, "sin-sum")
def sin_sum_terminal(n_vars: int, amplitude: float = 0.5) -> TerminalSpec:
    return TerminalSpec(
        phi=lambda x: amplitude * np.sin(_total(x)),
        n_vars=n_vars, bound=abs(amplitude), lipschitz=abs(amplitude),
        name=f"sin-sum({amplitude:g})", reduction="sum",
    )


@_register(TERMINAL_PRESETS, "product")
def product_terminal(n_vars: int) -> TerminalSpec:
    if n_vars < 2:
        raise ConfigurationError("product terminal needs at least two increments")
    return TerminalSpec(
        phi=lambda x: x[..., 0] * x[..., 1], n_vars=n_vars, bound=math.inf, lipschitz=math.inf,
        name="product",
    )


@_register(TERMINAL_PRESETS, "expression")
def expression_terminal(
    n_vars: int,
    expr: str = "0",
    bound: float = math.inf,
    lipschitz: float = math.inf,
    reduction: str = "none",
) -> TerminalSpec:
    return terminal_from_expression(expr, n_vars, bound=bound, lipschitz=lipschitz, reduction=reduction)


# ── Path-dependent generators ───────────────────────────


@_register(PATH_GENERATOR_PRESETS, "clamp-current")
def clamp_current(kappa: float = 0.5, cap: float = 1.0, alpha: float = 0.0) -> PathGeneratorSpec:
    """κ·clip(ω(t), −cap, cap) + αy."""

    def current(t, w, y, z):
        return kappa * np.clip(w, -cap, cap) + alpha * y

    return PathGeneratorSpec(
        eval=lambda t, path, y, z: current(t, path.current(), y, z),
        eval_current=current,
        m0=abs(kappa) * cap,
        l_y=abs(alpha),
        l_z=0.0,
        l_path=abs(kappa),
        name=f"clamp-current({kappa:g})",
        markovian=True,
    )


@_register(PATH_GENERATOR_PRESETS, "clamp-average")
def clamp_average(kappa: float = 0.5, cap: float = 1.0, alpha: float = 0.0) -> PathGeneratorSpec:
    """κ·clip((1/t)∫_0^t ω, −cap, cap) + αy; depends on the whole stopped path."""
    return PathGeneratorSpec(
        eval=lambda t, path, y, z: kappa * np.clip(path.running_mean(), -cap, cap) + alpha * y,
        m0=abs(kappa) * cap,
        l_y=abs(alpha),
        l_z=0.0,
        l_path=abs(kappa),
        name=f"clamp-average({kappa:g})",
    )


@_register(PATH_GENERATOR_PRESETS, "sqrt-current")
def sqrt_current(kappa: float = 0.5, cap: float = 1.0) -> PathGeneratorSpec:
    """κ·√(|ω(t)| ∧ cap), with the Hölder modulus κ√δ."""

    def current(t, w, y, z):
        return kappa * np.sqrt(np.minimum(np.abs(w), cap))

    return PathGeneratorSpec(
        eval=lambda t, path, y, z: current(t, path.current(), y, z),
        eval_current=current,
        m0=abs(kappa) * math.sqrt(cap),
        l_y=0.0,
        l_z=0.0,
        modulus=HolderModulus(abs(kappa), 0.5),
        name=f"sqrt-current({kappa:g})",
        markovian=True,
    )


@_register(PATH_GENERATOR_PRESETS, "path-free")
def path_free(alpha: float = 0.0, c: float = 0.2) -> PathGeneratorSpec:
    """αy + c."""

    def current(t, w, y, z):
        return alpha * y + c + 0.0 * w

    return PathGeneratorSpec(
        eval=lambda t, path, y, z: current(t, path.current(), y, z),
        eval_current=current,
        m0=abs(c),
        l_y=abs(alpha),
        l_z=0.0,
        name=f"path-free({alpha:g},{c:g})",
        markovian=True,
    )


# ── Closed forms ────────────────────────────────────────


def g_heat_oracle(preset: str, params: dict | None, band: VolatilityBand) -> Callable | None:
    """Closed-form u(t, x) of the G-heat equation for a one-increment terminal preset, if known."""
    params = params or {}
    if preset == "quad-convex":
        return lambda t, x: x**2 + band.var_hi * t
    if preset == "quad-concave":
        return lambda t, x: -(x**2) - band.var_lo * t
    if preset == "affine":
        a = (params.get("coefficients") or [1.0])[0]
        b = params.get("offset", 0.0)
        return lambda t, x: b + a * x
    if preset in ("constant", "zero"):
        value = params.get("value", 0.0)
        return lambda t, x: np.full(np.broadcast(t, x).shape, value)
    if preset == "exp-clamped" and band.is_degenerate:
        # matches the clamped terminal while |x| stays well inside the cap
        return lambda t, x: np.exp(x + 0.5 * band.var_hi * t)
    return None
