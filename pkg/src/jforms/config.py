"""Experiment configuration: a JSON document validated in one pass."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .grid import Grid, MetricField, band_limited


class ConfigError(ValueError):
    """Invalid configuration; the message lists every violation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSpec(_Strict):
    n: list[int] = Field(default_factory=lambda: [5, 5, 5, 5])
    L: list[float] = Field(default_factory=lambda: [1.0, 1.0, 1.0, 1.0])

    @field_validator("n")
    @classmethod
    def _odd(cls, v):
        if len(v) != 4:
            raise ValueError(f"grid.n needs 4 entries, got {len(v)}")
        bad = [f"axis {i + 1}: {s}" for i, s in enumerate(v) if s < 3 or s % 2 == 0]
        if bad:
            raise ValueError("grid sizes must be odd and at least 3 (" + ", ".join(bad) + ")")
        return v

    @field_validator("L")
    @classmethod
    def _positive(cls, v):
        if len(v) != 4 or any(x <= 0 for x in v):
            raise ValueError("grid.L needs 4 positive periods")
        return v

    def build(self) -> Grid:
        return Grid(tuple(self.n), tuple(self.L))


class MetricSpec(_Strict):
    type: Literal["flat", "diagonal"] = "flat"
    amplitude: float = Field(0.2, ge=0.0, le=2.0)
    modes: int = Field(1, ge=1, le=4)
    seed: int = Field(0, ge=0)

    def build(self, grid: Grid) -> MetricField:
        if self.type == "flat":
            return MetricField.flat(grid)
        rng = np.random.default_rng(self.seed)
        m = band_limited(grid, 4, rng, kmax=self.modes)
        g = np.zeros(grid.shape + (4, 4))
        for i in range(4):
            g[..., i, i] = np.exp(self.amplitude * m[i])
        return MetricField(grid, g)


class JSpec(_Strict):
    type: Literal["constant", "conjugated"] = "constant"
    amplitude: float = Field(0.1, ge=0.0)
    modes: int = Field(1, ge=1, le=4)
    seed: int = Field(0, ge=0)

    def recipe(self) -> dict:
        return self.model_dump()


class SolverSpec(_Strict):
    epsilon: float = Field(1e-3, gt=0.0)
    budget: int = Field(10_000, ge=1)
    relaxation: float = Field(1.6, gt=0.0, lt=2.0)
    penalty: float = Field(1.0, gt=0.0)
    affine_rtol: float = Field(1e-10, gt=0.0, lt=1e-2)


class AlphaSpec(_Strict):
    type: Literal["zero", "constant", "random"] = "zero"
    direction: int = Field(0, ge=0, le=1)
    amplitude: float = Field(0.2, ge=0.0)
    kmax: int = Field(1, ge=1, le=4)
    seed: int = Field(0, ge=0)


class Options(_Strict):
    degree: int = Field(2, ge=0, le=4)
    input: str | None = None
    alpha: AlphaSpec = Field(default_factory=AlphaSpec)
    sizes: list[int] = Field(default_factory=list)
    samples: int = Field(3, ge=1)
    dense: bool | None = None

    @field_validator("sizes")
    @classmethod
    def _odd_sizes(cls, v):
        bad = [s for s in v if s < 3 or s % 2 == 0]
        if bad:
            raise ValueError(f"sweep sizes must be odd and at least 3, got {bad}")
        return v


class OutputSpec(_Strict):
    dir: str = "out"
    save_forms: bool = True


class ExperimentConfig(_Strict):
    grid: GridSpec = Field(default_factory=GridSpec)
    metric: MetricSpec = Field(default_factory=MetricSpec)
    J: JSpec = Field(default_factory=JSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    options: Options = Field(default_factory=Options)
    output: OutputSpec = Field(default_factory=OutputSpec)
    seed: int = Field(0, ge=0, lt=2 ** 64)

    def canonical(self) -> str:
        return json.dumps(self.model_dump(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _format(err: ValidationError) -> str:
    lines = [f"invalid configuration ({err.error_count()} problem(s)):"]
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"].removeprefix("Value error, ")
        lines.append(f"  - {loc}: {msg}")
    return "\n".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format(err)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(data)
