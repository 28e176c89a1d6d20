"""
Scenario configuration: a single JSON document validated by pydantic.

Unknown keys are rejected everywhere. The builders turn validated sections into the
service-layer records.
"""

import enum
import os
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from qbm.config import OUTPUT_DIR
from qbm.services.bath import BathGrid, GridScheme, discretize
from qbm.services.gaussian import (
    CatState, GaussianState, cat_state, squeezed_state, thermal_state, vacuum_state,
)
from qbm.services.spectral import (
    BetaKind, BetaSchedule, CutoffShape, PhysicalParams, SpectralModel, SpectrumKind,
)


class ScenarioName(str, enum.Enum):
    KERNEL = "kernel"
    SIMULATE = "simulate"
    EXTRACT = "extract"
    LOCALITY = "locality"
    DECOHERE = "decohere"
    COUNTERPUNCH = "counterpunch"
    EQ10 = "eq10"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PhysicsConfig(StrictModel):
    m: float = Field(1.0, gt=0)
    Omega: float = Field(1.0, gt=0)
    hbar: float = Field(1.0, gt=0)
    kB: float = Field(1.0, gt=0)
    T: float = Field(1.0, ge=0)

    def build(self) -> PhysicalParams:
        return PhysicalParams(m=self.m, Omega=self.Omega, hbar=self.hbar, kB=self.kB, T=self.T)


class SpectrumConfig(StrictModel):
    kind: SpectrumKind = SpectrumKind.OHMIC
    gamma: float = Field(0.1, ge=0)
    Lambda: float = Field(50.0, gt=0)
    cutoff: CutoffShape = CutoffShape.EXPONENTIAL
    exponent: float = Field(1.0, ge=1)
    omega_ref: Optional[float] = Field(None, gt=0)
    table_path: Optional[str] = None

    @model_validator(mode="after")
    def _table_for_tabulated(self):
        if self.kind == SpectrumKind.TABULATED and not self.table_path:
            raise ValueError("tabulated spectrum requires table_path")
        return self

    def build(self, base_dir: str = ".") -> SpectralModel:
        if self.kind == SpectrumKind.TABULATED:
            path = self.table_path if os.path.isabs(self.table_path) else os.path.join(base_dir, self.table_path)
            return SpectralModel.from_csv(path, Lambda=self.Lambda, gamma=self.gamma)
        return SpectralModel(
            kind=self.kind, gamma=self.gamma, Lambda=self.Lambda, cutoff_shape=self.cutoff,
            exponent=self.exponent, omega_ref=self.omega_ref,
        )


class BetaConfig(StrictModel):
    kind: BetaKind = BetaKind.CLASSICAL


class BathConfig(StrictModel):
    N: int = Field(256, ge=1)
    scheme: Optional[GridScheme] = None
    omega_max: Optional[float] = Field(None, gt=0)


class NumericsConfig(StrictModel):
    dt: Optional[float] = Field(None, gt=0)
    horizon: float = Field(10.0, gt=0)
    samples: int = Field(2000, ge=2)
    N_traj: int = Field(1000, ge=2)
    seed: int = Field(0, ge=0)
    threads: Optional[int] = Field(None, ge=1)
    slip: bool = True
    truncate_history: bool = False


class StateConfig(StrictModel):
    kind: Literal["vacuum", "thermal", "squeezed", "cat"] = "vacuum"
    mean: Tuple[float, float] = (0.0, 0.0)
    squeeze: float = 0.0
    separation: float = Field(0.0, ge=0)
    phase: float = 0.0
    kT: Optional[float] = Field(None, ge=0)


class GridSpec(StrictModel):
    q_min: float = -8.0
    q_max: float = 8.0
    p_min: float = -8.0
    p_max: float = 8.0
    q_points: int = Field(201, gt=0)
    p_points: int = Field(201, gt=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.q_max < self.q_min or self.p_max < self.p_min:
            raise ValueError("grid bounds must satisfy min <= max")
        return self


class ImpulseConfig(StrictModel):
    t0: Optional[float] = Field(None, ge=0)
    width: Optional[float] = Field(None, gt=0)
    amplitude: float = 1.0
    mass_ratio: Optional[float] = Field(None, gt=0)


class Eq10Config(StrictModel):
    separation: float = Field(5.0, ge=0)
    squeeze: float = Field(0.5, ge=0)
    c: Optional[float] = None
    literal: bool = False


def _default_locality_states() -> List[StateConfig]:
    return [
        StateConfig(kind="vacuum"),
        StateConfig(kind="thermal", kT=2.0),
        StateConfig(kind="squeezed", squeeze=0.5),
    ]


class ScenarioConfig(StrictModel):
    scenario: ScenarioName
    physics: PhysicsConfig = PhysicsConfig()
    spectrum: SpectrumConfig = SpectrumConfig()
    beta: BetaConfig = BetaConfig()
    bath: BathConfig = BathConfig()
    numerics: NumericsConfig = NumericsConfig()
    state: StateConfig = StateConfig()
    locality_states: List[StateConfig] = Field(default_factory=_default_locality_states, min_length=2)
    grid: GridSpec = GridSpec()
    impulse: ImpulseConfig = ImpulseConfig()
    eq10: Eq10Config = Eq10Config()
    output_dir: Optional[str] = None


def json_schema() -> dict:
    return ScenarioConfig.model_json_schema()


def build_state(spec: StateConfig, params: PhysicalParams):
    if spec.kind == "cat":
        return cat_state(params, spec.separation, spec.phase)
    if spec.kind == "thermal":
        return thermal_state(params, spec.kT, mean=spec.mean)
    if spec.kind == "squeezed":
        return squeezed_state(params, spec.squeeze, mean=spec.mean)
    return vacuum_state(params, mean=spec.mean)


@dataclass
class ScenarioContext:
    """Everything a scenario handler needs: validated config plus run-time overrides."""

    config: ScenarioConfig
    out_dir: str
    seed: int
    threads: int
    base_dir: str = "."

    @property
    def params(self) -> PhysicalParams:
        return self.config.physics.build()

    @property
    def model(self) -> SpectralModel:
        return self.config.spectrum.build(self.base_dir)

    @property
    def beta(self) -> BetaSchedule:
        return BetaSchedule(kind=self.config.beta.kind, params=self.params)

    def grid(self, model: Optional[SpectralModel] = None) -> BathGrid:
        bath = self.config.bath
        return discretize(
            model or self.model, bath.N, scheme=bath.scheme, omega_max=bath.omega_max,
            params=self.params,
        )

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)


@dataclass
class ScenarioResult:
    summary: dict
    artifacts: List[Tuple[str, str, Optional[int]]] = field(default_factory=list)
    seeds: dict = field(default_factory=dict)

    def add(self, path: str, rows: Optional[int], kind: str = "csv"):
        self.artifacts.append((path, kind, rows))


def default_output_dir(config: ScenarioConfig) -> str:
    return config.output_dir or os.path.join(OUTPUT_DIR, config.scenario.value)
