import math
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from glab.models import SpaceGrid, TimePartition, VolatilityBand
from glab.services.presets import GENERATOR_PRESETS, PATH_GENERATOR_PRESETS, TERMINAL_PRESETS


def to_builtin(value: Any) -> Any:
    """numpy scalars and arrays to plain Python, recursively."""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ── Experiment configuration ────────────────────────────


class PartitionConfig(_Strict):
    times: Optional[list[float]] = None
    uniform: Optional[int] = None
    dyadic_level: Optional[int] = None

    @model_validator(mode="after")
    def _exactly_one(self) -> "PartitionConfig":
        given = [v is not None for v in (self.times, self.uniform, self.dyadic_level)]
        if sum(given) == 0:
            self.uniform = 2
        elif sum(given) > 1:
            raise ValueError("give exactly one of times, uniform, dyadic_level")
        if self.uniform is not None and self.uniform < 1:
            raise ValueError("uniform needs at least one interval")
        if self.dyadic_level is not None and self.dyadic_level < 0:
            raise ValueError("dyadic_level must be >= 0")
        return self

    def build(self, horizon: float) -> TimePartition:
        if self.times is not None:
            if abs(self.times[-1] - horizon) > 1e-12:
                raise ValueError(f"partition ends at {self.times[-1]}, horizon is {horizon}")
            return TimePartition(times=tuple(self.times))
        if self.dyadic_level is not None:
            return TimePartition.dyadic(horizon, self.dyadic_level)
        return TimePartition.uniform(horizon, self.uniform)


class GridConfig(_Strict):
    half_width: Optional[float] = Field(default=None, gt=0)
    width_multiplier: float = Field(default=6.0, gt=0)
    nodes: int = Field(default=121, ge=3)
    param_nodes: int = Field(default=21, ge=2)
    dt_safety: float = Field(default=0.4, gt=0, le=1.0)
    store_steps: Optional[int] = Field(default=200, ge=1)

    def space_grid(self, band: VolatilityBand, horizon: float) -> SpaceGrid:
        half = self.half_width or self.width_multiplier * band.sigma_hi * math.sqrt(horizon)
        return SpaceGrid.symmetric(half, self.nodes)


class PresetConfig(_Strict):
    preset: str
    params: dict[str, Any] = Field(default_factory=dict)


class ScenarioConfig(_Strict):
    dt: float = Field(default=1 / 256, gt=0)
    paths_per_control: int = Field(default=200, ge=2)
    n_bang_bang: int = Field(default=8, ge=0)
    n_random: int = Field(default=8, ge=0)


class AnalysisConfig(_Strict):
    g_function: bool = True
    ledger: bool = True
    gheat: bool = True
    upper_expectation: bool = True
    qv_band: bool = True
    integrals: bool = True
    cascade: bool = True
    residual: bool = True
    bmo: bool = True
    girsanov: bool = True
    tilt: bool = True
    linearization: bool = True
    stability: bool = True
    tower: bool = True
    apriori: bool = True

    oracle_paths: int = Field(default=10_000, ge=2)
    oracle_dt: float = Field(default=1e-3, gt=0)
    gheat_nodes: int = Field(default=401, ge=3)
    residual_dt: float = Field(default=1 / 4096, gt=0)
    residual_paths: int = Field(default=128, ge=2)
    residual_factors: list[int] = Field(default_factory=lambda: [4, 2, 1])
    bmo_times: int = Field(default=8, ge=1)
    bmo_buckets: int = Field(default=8, ge=1)
    linearization_eps: float = Field(default=1e-3, gt=0)
    stability_deltas: list[float] = Field(default_factory=lambda: [0.1, 0.05, 0.025])
    k_moments: list[float] = Field(default_factory=lambda: [1.0, 2.0])


class ApproxConfig(_Strict):
    levels: list[int] = Field(default_factory=lambda: [2, 3, 4])
    nodes_per_axis: int = Field(default=16, ge=2)
    fine_dt: float = Field(default=1 / 1024, gt=0)
    paths_per_control: int = Field(default=64, ge=2)
    grid_nodes: int = Field(default=61, ge=3)

    @field_validator("levels")
    @classmethod
    def _increasing(cls, v: list[int]) -> list[int]:
        if not v or any(b <= a for a, b in zip(v, v[1:])) or v[0] < 1:
            raise ValueError("levels must be a non-empty increasing list of positive integers")
        return v


class Tolerances(_Strict):
    gheat: float = 5e-3
    classical: float = 1e-2
    cascade_y0: float = 1e-2
    k_extreme: float = 2e-2
    k_monotone: float = 1e-12
    ledger: float = 1e-12
    residual: float = 5e-2
    stability: float = 1e-2
    mc_sigmas: float = 3.0
    martingale: float = 1e-2
    bmo_relative: float = 0.05
    gap_slack: float = 1e-6


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = 1
    seed: int = Field(default=20240601, ge=0)
    band: VolatilityBand = Field(default_factory=lambda: VolatilityBand(sigma_lo=0.5, sigma_hi=1.0))
    horizon: float = Field(default=1.0, gt=0)
    partition: PartitionConfig = Field(default_factory=PartitionConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    generator: PresetConfig = Field(default_factory=lambda: PresetConfig(preset="lipschitz-random"))
    terminal: PresetConfig = Field(default_factory=lambda: PresetConfig(preset="sin-sum"))
    path_generator: PresetConfig = Field(default_factory=lambda: PresetConfig(preset="clamp-current"))
    scenarios: ScenarioConfig = Field(default_factory=ScenarioConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    approx: ApproxConfig = Field(default_factory=ApproxConfig)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    output_dir: Optional[str] = None

    @field_validator("generator")
    @classmethod
    def _known_generator(cls, v: PresetConfig) -> PresetConfig:
        return _known(v, GENERATOR_PRESETS, "generator")

    @field_validator("terminal")
    @classmethod
    def _known_terminal(cls, v: PresetConfig) -> PresetConfig:
        return _known(v, TERMINAL_PRESETS, "terminal")

    @field_validator("path_generator")
    @classmethod
    def _known_path_generator(cls, v: PresetConfig) -> PresetConfig:
        return _known(v, PATH_GENERATOR_PRESETS, "path generator")

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        self.partition.build(self.horizon)
        steps = self.horizon / self.scenarios.dt
        if abs(steps - round(steps)) > 1e-9 * steps:
            raise ValueError(f"scenarios.dt={self.scenarios.dt} does not divide horizon {self.horizon}")
        return self


def _known(v: PresetConfig, registry: dict, kind: str) -> PresetConfig:
    if v.preset not in registry:
        raise ValueError(f"unknown {kind} preset {v.preset!r}; known: {', '.join(sorted(registry))}")
    return v


# ── Reports ─────────────────────────────────────────────


class Assertion(BaseModel):
    name: str
    passed: bool
    detail: str = ""


class ReportSection(BaseModel):
    name: str
    inputs: dict[str, Any] = Field(default_factory=dict)
    estimates: dict[str, Any] = Field(default_factory=dict)
    tolerances: dict[str, float] = Field(default_factory=dict)
    assertions: list[Assertion] = Field(default_factory=list)
    warnings: list[str] = Field(default_factory=list)
    notes: list[str] = Field(default_factory=list)

    def record(self, **values: Any) -> None:
        self.estimates.update(to_builtin(values))

    def given(self, **values: Any) -> None:
        self.inputs.update(to_builtin(values))

    def tolerance(self, **values: float) -> None:
        self.tolerances.update({k: float(v) for k, v in values.items()})

    def check(self, name: str, passed: bool, detail: str = "") -> bool:
        self.assertions.append(Assertion(name=name, passed=bool(passed), detail=detail))
        return bool(passed)

    def warn(self, message: str) -> None:
        self.warnings.append(message)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)


class RunReport(BaseModel):
    command: str
    schema_version: int = 1
    seed: int
    config: dict[str, Any] = Field(default_factory=dict)
    sections: list[ReportSection] = Field(default_factory=list)
    artifacts: list[str] = Field(default_factory=list)

    def section(self, name: str) -> ReportSection:
        sec = ReportSection(name=name)
        self.sections.append(sec)
        return sec

    def get(self, name: str) -> ReportSection:
        for sec in self.sections:
            if sec.name == name:
                return sec
        raise KeyError(name)

    @property
    def failed(self) -> list[str]:
        return [f"{s.name}: {a.name}" for s in self.sections for a in s.assertions if not a.passed]

    @property
    def n_warnings(self) -> int:
        return sum(len(s.warnings) for s in self.sections)

    @property
    def passed(self) -> bool:
        return not self.failed

    def exit_code(self, strict: bool = False) -> int:
        if self.failed or (strict and self.n_warnings):
            return 1
        return 0
