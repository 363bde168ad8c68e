"""Scenario configuration file (YAML), parsed strictly.

Unknown keys are rejected at every level. Every section is optional and
falls back to the defaults below, which reproduce the pendulum design.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .plant import PendulumParams

# reference spectra the pendulum design report is checked against, as [re, im]
TARGET_LQT_POLES = [(-16.55, 12.80), (-16.55, -12.80), (-21.20, 1.76), (-21.20, -1.76)]
TARGET_OBSERVER_POLES = [(-59.40, 80.54), (-59.40, -80.54), (-61.04, 76.24), (-61.04, -76.24)]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PendulumSection(_Strict):
    R_m: float = 8.4
    k_m: float = 0.042
    r: float = 0.085
    l: float = 0.129 / 2
    m_p: float = 0.024
    g: float = 9.81
    b_r: float = 0.0005
    b_p: float = 0.0001
    J_r: float = 2.3060e-4
    J_p: float = 1.3313e-4


class MatricesSection(_Strict):
    A: list[list[float]]
    B1: list[list[float]]
    B2: list[list[float]]
    C2: list[list[float]]
    D21: list[list[float]]
    E: list[list[float]]
    C1: Optional[list[list[float]]] = None
    D12: Optional[list[list[float]]] = None


class PlantSection(_Strict):
    kind: Literal["pendulum", "linear"] = "pendulum"
    pendulum: PendulumSection = PendulumSection()
    matrices: Optional[MatricesSection] = None

    @model_validator(mode="after")
    def _matrices_for_linear(self):
        if self.kind == "linear" and self.matrices is None:
            raise ValueError("plant.kind 'linear' needs plant.matrices")
        return self


class ObserverSection(_Strict):
    method: Literal["poles", "care"] = "poles"
    # [re, im] pairs; the default is the observer spectrum of the pendulum design
    poles: list[tuple[float, float]] = Field(default_factory=lambda: list(TARGET_OBSERVER_POLES))
    W_proc: Optional[list[list[float]]] = None
    W_meas: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _weights_for_care(self):
        if self.method == "care" and (self.W_proc is None or self.W_meas is None):
            raise ValueError("observer.method 'care' needs W_proc and W_meas")
        return self


class DesignSection(_Strict):
    Q: list[list[float]] = [[225.0]]
    R: list[list[float]] = [[2.0]]
    observer: ObserverSection = ObserverSection()
    gamma: float = Field(0.5, gt=0)
    regularization_eps: float = Field(1e-6, gt=0)


class SignalSection(_Strict):
    kind: Literal["zero", "constant", "square", "sinusoid", "exp_decay"] = "zero"
    amplitude: Optional[float] = None
    amplitude_deg: Optional[float] = None
    frequency: float = 0.0
    rate: float = 0.0

    @model_validator(mode="after")
    def _one_amplitude(self):
        if self.amplitude is not None and self.amplitude_deg is not None:
            raise ValueError("give amplitude or amplitude_deg, not both")
        return self

    @property
    def amplitude_rad(self) -> float:
        if self.amplitude_deg is not None:
            return float(np.deg2rad(self.amplitude_deg))
        return 0.0 if self.amplitude is None else float(self.amplitude)


class DisturbanceSection(SignalSection):
    channel: Literal["input", "state"] = "input"
    direction: Optional[list[float]] = None


class NoiseSection(_Strict):
    std: float = Field(1e-3, ge=0)
    seed: int = 1


PRESETS = {
    "caseA_w1": {"reference": {"kind": "square", "amplitude_deg": 20.0, "frequency": 0.05},
                 "disturbance": {"kind": "square", "amplitude": 2.0, "frequency": 0.5}},
    "caseA_w2": {"reference": {"kind": "square", "amplitude_deg": 20.0, "frequency": 0.05},
                 "disturbance": {"kind": "exp_decay", "amplitude": 5.0, "rate": 0.1}},
    "caseB_w1": {"reference": {"kind": "sinusoid", "amplitude": float(np.pi / 3), "frequency": float(np.pi)},
                 "disturbance": {"kind": "square", "amplitude": 2.0, "frequency": 0.5}},
    "caseB_w2": {"reference": {"kind": "sinusoid", "amplitude": float(np.pi / 3), "frequency": float(np.pi)},
                 "disturbance": {"kind": "exp_decay", "amplitude": 5.0, "rate": 0.1}},
}


class ScenarioSection(_Strict):
    preset: Optional[Literal["caseA_w1", "caseA_w2", "caseB_w1", "caseB_w2"]] = None
    reference: SignalSection = SignalSection()
    disturbance: DisturbanceSection = DisturbanceSection()
    noise: NoiseSection = NoiseSection()
    T: float = Field(20.0, gt=0)
    h: float = Field(1e-4, gt=0)
    x0: Optional[list[float]] = None

    @model_validator(mode="before")
    @classmethod
    def _apply_preset(cls, data):
        if isinstance(data, dict) and data.get("preset"):
            preset = PRESETS.get(data["preset"])
            if preset is None:
                return data
            data = dict(data)
            for key, val in preset.items():
                merged = dict(val)
                merged.update(data.get(key) or {})
                data[key] = merged
        return data

    @model_validator(mode="after")
    def _grid(self):
        if abs(round(self.T / self.h) * self.h - self.T) > 1e-9 * self.T:
            raise ValueError("scenario.T must be an integer multiple of scenario.h")
        return self


class EsSection(_Strict):
    a: float = Field(0.8, gt=0, lt=1)
    h: float = Field(0.1, gt=0, lt=1)
    beta: float = Field(0.015, ge=0)
    delta: Optional[float] = Field(None, gt=0)
    k_max: int = Field(100, ge=1)
    alpha0: float = 1.0
    probe_spacing: float = Field(0.1, gt=0)
    contraction: float = Field(0.1, gt=0, lt=1)


class OutputSection(_Strict):
    dir: str = "out"
    decimate: int = Field(10, ge=1)


class Config(_Strict):
    plant: PlantSection = PlantSection()
    design: DesignSection = DesignSection()
    scenario: ScenarioSection = ScenarioSection(preset="caseA_w1")
    es: EsSection = EsSection()
    output: OutputSection = OutputSection()

    def pendulum_params(self) -> PendulumParams:
        return PendulumParams(**self.plant.pendulum.model_dump())


def load_config(path) -> Config:
    """Read and validate a YAML config; raises :class:`ConfigError`."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(raw)


def parse_config(raw: dict) -> Config:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    try:
        return Config.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def with_overrides(cfg: Config, **sections) -> Config:
    """Copy of ``cfg`` with nested fields replaced, e.g. ``scenario={'preset': 'caseB_w1'}``."""
    data = cfg.model_dump()
    for name, values in sections.items():
        if name == "scenario" and "preset" in values:
            # a new preset replaces the signals of the old one
            data[name].pop("reference", None)
            data[name].pop("disturbance", None)
        data[name].update(values)
    return parse_config(data)
