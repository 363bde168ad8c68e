"""Iteration-domain extremum seeking for the filter gain factor.

One ES iteration consumes one measured cost ``J(alpha(k))``::

    zeta(k+1)      = -h zeta(k) + J(alpha(k))
    alpha_hat(k+1) = alpha_hat(k) - delta beta cos(w k) [J(alpha(k)) - (1+h) zeta(k)]
    alpha(k+1)     = alpha_hat(k+1) + beta cos(w (k+1)),      w = a pi
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .sim import DIVERGED_COST

log = logging.getLogger(__name__)


class EsError(RuntimeError):
    pass


@dataclass(frozen=True)
class EsParams:
    a: float = 0.8
    h: float = 0.1
    beta: float = 0.015
    delta: float = 1.0
    k_max: int = 100
    alpha0: float = 1.0

    def __post_init__(self):
        if not 0 < self.a < 1:
            raise ValueError("a must lie in (0, 1)")
        if not 0 < self.h < 1:
            raise ValueError("h must lie in (0, 1)")
        if self.beta < 0 or self.delta <= 0 or self.k_max < 1:
            raise ValueError("need beta >= 0, delta > 0, k_max >= 1")

    @property
    def omega(self) -> float:
        return self.a * math.pi


@dataclass
class EsState:
    k: int
    zeta: float
    alpha_hat: float
    alpha: float
    history: list = field(default_factory=list)

    @classmethod
    def initial(cls, p: EsParams, zeta0: float = 0.0) -> "EsState":
        """State at k = 0 with ``alpha(0) = alpha0``, so ``alpha_hat(0) = alpha0 - beta``."""
        return cls(k=0, zeta=zeta0, alpha_hat=p.alpha0 - p.beta, alpha=p.alpha0)


@dataclass(frozen=True)
class EsRecord:
    k: int
    alpha: float
    alpha_hat: float
    zeta: float
    J: float


def es_step(st: EsState, p: EsParams, J_k: float) -> EsState:
    """Apply one ES update for the cost measured at ``st.alpha``."""
    if not math.isfinite(J_k):
        raise EsError(f"non-finite cost at iteration {st.k}")
    c = math.cos(p.omega * st.k)
    zeta = -p.h * st.zeta + J_k
    alpha_hat = st.alpha_hat - p.delta * p.beta * c * (J_k - (1.0 + p.h) * st.zeta)
    alpha = alpha_hat + p.beta * math.cos(p.omega * (st.k + 1))
    history = st.history + [EsRecord(st.k, st.alpha, st.alpha_hat, st.zeta, J_k)]
    return EsState(k=st.k + 1, zeta=zeta, alpha_hat=alpha_hat, alpha=alpha, history=history)


def demodulation_gain(p: EsParams) -> float:
    """Real part of the high-pass ``(z - 1)/(z + h)`` at the dither frequency.

    Averaged over a dither period, the ``alpha_hat`` update is
    ``-delta beta^2 (gain / 2) J'(alpha_hat)``.
    """
    z = complex(math.cos(p.omega), math.sin(p.omega))
    return ((z - 1) / (z + p.h)).real


def prescan_delta(cost: Callable[[float], float], p: EsParams, spacing: float = 0.1,
                  contraction: float = 0.1) -> tuple[float, list[tuple[float, float]]]:
    """Step size from a 5-point probe of the cost around ``alpha0``.

    A quadratic fitted to the probe gives a curvature ``J''``; ``delta`` is
    chosen so that the averaged update contracts the distance to the
    minimizer by ``contraction`` per iteration. A non-positive curvature
    falls back to the probe's mean absolute second difference.
    """
    alphas = p.alpha0 + spacing * np.arange(-2, 3)
    costs = [float(cost(float(a))) for a in alphas]
    probe = list(zip(alphas.tolist(), costs))
    ok = [(a, j) for a, j in probe if j < DIVERGED_COST]
    if len(ok) < 3:
        raise EsError("probe runs diverged; cannot size the ES step")
    xs, js = np.array(ok).T
    curv = 2.0 * np.polyfit(xs, js, 2)[0]
    if not curv > 0:
        d2 = np.abs(np.diff(js, 2)) / spacing ** 2
        curv = float(np.mean(d2)) if d2.size and np.mean(d2) > 0 else 1.0
    if p.beta == 0:
        return 1.0, probe
    delta = contraction / (p.beta ** 2 * demodulation_gain(p) / 2.0 * curv)
    return float(delta), probe


@dataclass
class TuneResult:
    alpha_star: float
    history: list[EsRecord]
    delta: float
    probe: list = field(default_factory=list)

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.J for r in self.history])

    @property
    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(self.costs)


def tune(cost: Callable[[float], float], p: EsParams, warm_start: bool = True,
         callback: Callable[[EsRecord], None] | None = None) -> TuneResult:
    """Run ``k_max`` ES iterations against ``cost`` and return the final ``alpha_hat``.

    With ``warm_start`` the high-pass state starts at the fixed point of the
    first measured cost, ``zeta(0) = J(alpha(0)) / (1 + h)``, so the first
    update is not kicked by the cost's DC level.
    """
    st = EsState.initial(p)
    diverged = 0
    for k in range(p.k_max):
        J = float(cost(st.alpha))
        if J >= DIVERGED_COST:
            diverged += 1
        if k == 0 and warm_start:
            st = replace(st, zeta=J / (1.0 + p.h))
        st = es_step(st, p, J)
        if callback is not None:
            callback(st.history[-1])
        log.debug("k=%d alpha=%.6f J=%.6g", k, st.history[-1].alpha, J)
    if diverged == p.k_max:
        raise EsError("every ES run diverged")
    return TuneResult(alpha_star=st.alpha_hat, history=st.history, delta=p.delta)


def write_history_csv(history: list[EsRecord], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "alpha", "alpha_hat", "zeta", "J"])
        for r in history:
            w.writerow([r.k, repr(r.alpha), repr(r.alpha_hat), repr(r.zeta), repr(r.J)])
    return path
