"""
Run configuration: YAML file validated into frozen pydantic models.

Keys mirror the model fields one-to-one; docs/config.md lists them.
"""

import logging
import math
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import ConfigError
from scaling import conjugate
from spectral_core import Grid


logger = logging.getLogger(__name__)

# the CLI subcommand overrides the configured scenario
Scenario = Literal["plan", "blocks", "flow", "step", "iterate", "demo"]


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class IndexConfig(_Section):
    d: int = Field(default=2, ge=2, le=3)
    s: float = Field(default=2.0, ge=1.0)
    p: float = Field(default=1.0, ge=1.0)
    s_tilde: float = Field(default=4.0 / 3.0, ge=1.0)
    p_tilde: float = Field(default=1.0, ge=1.0)
    s_bar: Optional[float] = Field(default=None, ge=1.0)
    m_bar: Optional[int] = Field(default=None, ge=0)
    k: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "IndexConfig":
        for name in ("s", "p", "p_tilde"):
            if math.isinf(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.s_tilde < conjugate(self.s):
            raise ValueError(f"standing assumption 1 ≤ s̃ < s′ violated (s̃={self.s_tilde}, s={self.s})")
        diffusion = (self.s_bar, self.m_bar, self.k)
        if any(v is not None for v in diffusion) and not all(v is not None for v in diffusion):
            raise ValueError("s_bar, m_bar and k must be given together")
        return self

    @property
    def diffusion(self) -> bool:
        return self.k is not None


class GridConfig(_Section):
    n_x: int = 32
    n_t: int = 129

    def to_grid(self, d: int) -> Grid:
        return Grid(d=d, n_x=self.n_x, n_t=self.n_t)


class ToleranceConfig(_Section):
    cde_relative: float = Field(default=1e-2, gt=0.0)
    diffusion_identity: float = Field(default=1e-4, gt=0.0)
    slope: float = Field(default=0.15, gt=0.0)
    floor_factor: float = Field(default=4.0, ge=1.0)
    scale: float = Field(default=1.0, gt=0.0)

    def scaled(self, name: str) -> float:
        return getattr(self, name) * self.scale


class AtlasConfig(_Section):
    s_values: list[float] = Field(default_factory=lambda: [1.5, 2.0, 4.0, 8.0])
    p_values: list[float] = Field(default_factory=lambda: [1.0, 1.5, 2.0])
    s_tilde_values: list[float] = Field(default_factory=lambda: [1.0, 1.25, 1.5])
    p_tilde_values: list[float] = Field(default_factory=lambda: [1.0, 1.5, 2.0])


class ScenarioConfig(_Section):
    kind: Scenario = "iterate"
    mu_ladder: list[float] = Field(default_factory=lambda: [2.0])
    n_steps: int = Field(default=2, ge=0)
    horizon: int = Field(default=6, ge=2)
    eps: Optional[float] = Field(default=None, gt=0.0)
    delta: Optional[float] = Field(default=None, gt=0.0)
    eta: Optional[float] = Field(default=None, gt=0.0)
    modes: list[tuple[int, ...]] = Field(default_factory=lambda: [(1, 0), (1, 1)])
    operator: Optional[Literal["minus_laplacian"]] = None
    seed: int = 0
    sweep_mu: list[float] = Field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0])
    sweep_kappa: list[float] = Field(default_factory=lambda: [4.0, 5.0, 6.0, 8.0])
    shear_amplitude: float = 0.2
    charts: int = Field(default=4, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "ScenarioConfig":
        if not self.mu_ladder or min(self.mu_ladder) < 2:
            raise ValueError("mu_ladder needs at least one μ ≥ 2")
        if self.n_steps >= self.horizon:
            raise ValueError(f"n_steps={self.n_steps} must stay below the schedule horizon {self.horizon}")
        if not self.modes or any(all(c == 0 for c in mode) for mode in self.modes):
            raise ValueError("modes must be nonzero wavevectors")
        return self


class RunConfig(_Section):
    indices: IndexConfig = Field(default_factory=IndexConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    tolerances: ToleranceConfig = Field(default_factory=ToleranceConfig)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    atlas: AtlasConfig = Field(default_factory=AtlasConfig)
    output_dir: Path = Path("runs")
    dump_fields: bool = False

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        d = self.indices.d
        if self.indices.diffusion and self.scenario.operator is None:
            raise ValueError("diffusion indices need scenario.operator")
        for mode in self.scenario.modes:
            if len(mode) != d:
                raise ValueError(f"mode {mode} does not match d={d}")
        self.grid.to_grid(d)
        return self

    @property
    def grid_model(self) -> Grid:
        return self.grid.to_grid(self.indices.d)

    def with_overrides(self, **overrides: object) -> "RunConfig":
        """Apply CLI overrides given as dotted keys, e.g. scenario.seed=3."""
        data = self.model_dump()
        for dotted, value in overrides.items():
            if value is None:
                continue
            node = data
            *parents, leaf = dotted.split(".")
            for key in parents:
                node = node[key]
            node[leaf] = value
        return _validate(data, "overrides")


def _validate(data: dict, source: str) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{source}: {e}") from e


def load_config(path: Union[str, Path, None]) -> RunConfig:
    """Load a YAML run config; no path gives the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as e:
        raise ConfigError(f"{path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    config = _validate(data, str(path))
    logger.info(f"[HARNESS] ✓ Loaded config {path.name} (scenario {config.scenario.kind})")
    return config
