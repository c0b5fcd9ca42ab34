"""Versioned experiment configuration, validated before anything runs."""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .fock import L, HilbertConfig
from .noise import CHANNELS, NoiseParams
from .sbs import SbsParams

SCHEMA_VERSION = 1

BUDGETS = {
    "ci": {"cavity_dim": 100, "samples": 400, "max_t": 8},
    "paper": {"cavity_dim": 140, "samples": 4000, "max_t": 10},
}

EXPERIMENTS = ("prepare", "probabilities", "estimate", "bounds", "backaction",
               "noise_sweep", "figure")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SbsSection(_Strict):
    delta: float = Field(0.3, gt=0, lt=1)
    cavity_dim: int | None = Field(None, ge=2)
    gauge: tuple[int, int] = (0, 0)
    prepare_rounds: int = Field(120, ge=1)

    @field_validator("gauge")
    @classmethod
    def _bits(cls, v):
        if any(b not in (0, 1) for b in v):
            raise ValueError("gauge entries must be 0 or 1")
        return v


class NoiseSection(_Strict):
    t1_qubit: float = 280.0
    t2_qubit: float = 240.0
    t1_cavity: float = 610.0
    t2_cavity: float = 980.0
    eta: float = 1.0
    t_cd: float = 500.0
    channels: list[Literal[CHANNELS]] = Field(default_factory=lambda: list(CHANNELS))
    integrator_steps: int = Field(20, ge=1)

    def build(self) -> NoiseParams:
        return NoiseParams(self.t1_qubit, self.t2_qubit, self.t1_cavity, self.t2_cavity,
                           self.eta, self.t_cd, frozenset(self.channels), self.integrator_steps)


class GridSection(_Strict):
    kind: Literal["mle", "bayes"] = "mle"
    count: int | None = Field(None, ge=3)
    half_width: float | None = Field(None, gt=0)


class ProbabilitiesSection(_Strict):
    t_rounds: int = Field(4, ge=1)
    quadrature: Literal["q", "p"] = "q"


class EstimateSection(_Strict):
    estimator: Literal["mle", "bayes"] = "mle"
    sigma: float = Field(0.15 * L, gt=0)
    t_values: list[int] = Field(default_factory=lambda: [1, 2, 4, 8])


class BoundsSection(_Strict):
    n_bar: float | None = Field(None, ge=0)
    sigma: float | None = Field(0.15 * L, gt=0)


class BackactionSection(_Strict):
    t_rounds: int = Field(8, ge=1)
    m_rounds: int = Field(4, ge=0)
    n_repeats: int = Field(6, ge=1)
    sigma: float = Field(0.15 * L, gt=0)
    samples: int | None = Field(None, ge=1)


class NoiseSweepSection(_Strict):
    etas: list[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0])
    rounds: int = Field(100, ge=1)
    per_channel: bool = True


class FigureSection(_Strict):
    number: Literal[2, 3, 7, 11] = 2
    deltas: list[float] = Field(default_factory=lambda: [0.25, 0.3, 0.35])
    rounds: int = Field(30, ge=1)
    t_values: list[int] = Field(default_factory=lambda: [1, 2, 4, 8])
    zeta_points: int = Field(41, ge=2)
    tolerance: float = 0.03


class CacheSection(_Strict):
    enabled: bool = True
    directory: str | None = None


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = 1
    experiment: Literal[EXPERIMENTS]
    seed: int = 0
    output_dir: str = "out"
    sbs: SbsSection = SbsSection()
    noise: NoiseSection | None = None
    grid: GridSection = GridSection()
    probabilities: ProbabilitiesSection = ProbabilitiesSection()
    estimate: EstimateSection = EstimateSection()
    bounds: BoundsSection = BoundsSection()
    backaction: BackactionSection = BackactionSection()
    noise_sweep: NoiseSweepSection = NoiseSweepSection()
    figure: FigureSection = FigureSection()
    cache: CacheSection = CacheSection()

    def sbs_params(self, budget: str, delta: float | None = None) -> SbsParams:
        dim = self.sbs.cavity_dim or BUDGETS[budget]["cavity_dim"]
        return SbsParams(self.sbs.delta if delta is None else delta, tuple(self.sbs.gauge),
                         HilbertConfig(dim))

    def noise_params(self) -> NoiseParams | None:
        return None if self.noise is None else self.noise.build()


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML config; raises ValueError on any problem."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValueError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return ExperimentConfig.model_validate(raw)
