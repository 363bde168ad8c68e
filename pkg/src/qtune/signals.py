"""Deterministic test signals: references, disturbances and seeded noise."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KIND_CODES = {"zero": 0, "constant": 1, "square": 2, "sinusoid": 3, "exp_decay": 4}


@dataclass(frozen=True)
class Signal:
    """Scalar signal of time.

    * ``square``: ``+amplitude`` on ``[0, 1/(2 frequency))``, then ``-amplitude``;
      ``frequency`` in Hz.
    * ``sinusoid``: ``amplitude * sin(frequency * t)``; ``frequency`` in rad/s.
    * ``exp_decay``: ``amplitude * exp(-rate * t)``.
    * ``constant``: ``amplitude``.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    frequency: float = 0.0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if self.kind == "square" and not self.frequency > 0:
            raise ValueError("square wave needs a positive frequency")

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def params(self) -> np.ndarray:
        return np.array([self.amplitude, self.frequency, self.rate], dtype=float)

    def __call__(self, t):
        return evaluate(self.code, self.params, t)


def evaluate(code: int, params, t):
    a, f, rate = params
    t = np.asarray(t, dtype=float)
    if code == 0:
        return np.zeros_like(t)
    if code == 1:
        return np.full_like(t, a)
    if code == 2:
        half = np.floor(2.0 * f * t + 1e-9)
        return np.where(np.mod(half, 2.0) == 0.0, a, -a)
    if code == 3:
        return a * np.sin(f * t)
    if code == 4:
        return a * np.exp(-rate * t)
    raise ValueError(f"bad signal code {code}")


@dataclass(frozen=True)
class WhiteNoise:
    """Gaussian white noise sampled once per integration step, reproducible by seed."""

    std: float = 0.0
    seed: int = 0

    def samples(self, n_steps: int, channels: int) -> np.ndarray:
        if self.std == 0.0:
            return np.zeros((n_steps, channels))
        rng = np.random.default_rng(self.seed)
        return rng.normal(0.0, self.std, size=(n_steps, channels))
