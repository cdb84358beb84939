"""Helpers shared by the subcommands: building problems and scenario families from a config."""

import math

from glab.models import GeneratorSpec, TerminalSpec, TimePartition
from glab.schemas import ExperimentConfig, RunReport
from glab.services.presets import build_generator, build_terminal
from glab.services.scenarios import ScenarioFamily, default_family


def new_report(command: str, config: ExperimentConfig) -> RunReport:
    return RunReport(command=command, seed=config.seed, config=config.model_dump(mode="json"))


def partition_of(config: ExperimentConfig) -> TimePartition:
    return config.partition.build(config.horizon)


def problem_of(config: ExperimentConfig, n_vars: int | None = None) -> tuple[GeneratorSpec, TerminalSpec]:
    n = n_vars or partition_of(config).n_intervals
    f = build_generator(config.generator.preset, n, config.generator.params)
    phi = build_terminal(config.terminal.preset, n, config.terminal.params)
    return f, phi


def family_of(
    config: ExperimentConfig,
    dt: float | None = None,
    paths_per_control: int | None = None,
    seed_offset: int = 0,
) -> ScenarioFamily:
    sc = config.scenarios
    return default_family(
        config.band,
        config.horizon,
        dt or sc.dt,
        paths_per_control or sc.paths_per_control,
        config.seed + seed_offset,
        sc.n_bang_bang,
        sc.n_random,
    )


def closed_form_y0(config: ExperimentConfig) -> float | None:
    """Y₀ for a generator αy + c (α may be 0) with constant terminal v.

    u depends on t only and solves u' = −2G(αu + c); the sign of αu + c is that of αv + c
    along the whole solution, so u(0) = v·e^{αs²T} + (c/α)(e^{αs²T} − 1) with s = σ̄ or σ̲.
    """
    gen, term = config.generator, config.terminal
    if term.preset == "zero":
        v = 0.0
    elif term.preset == "constant":
        v = float(term.params.get("value", 0.0))
    else:
        return None
    if gen.preset == "zero":
        alpha, c = 0.0, 0.0
    elif gen.preset == "constant":
        alpha, c = 0.0, float(gen.params.get("c", 0.3))
    elif gen.preset == "linear-y":
        alpha, c = float(gen.params.get("alpha", 0.5)), float(gen.params.get("c", 0.0))
    else:
        return None
    var = config.band.var_hi if alpha * v + c >= 0 else config.band.var_lo
    rate = alpha * var * config.horizon
    if alpha == 0:
        return v + c * var * config.horizon
    return v * math.exp(rate) + (c / alpha) * math.expm1(rate)
