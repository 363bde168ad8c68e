"""Plant models: generic nonlinear plant, its linearization, and the Furuta pendulum."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .linalg import as_mat, pbh_detectable, pbh_stabilizable


@dataclass(frozen=True)
class LinearPlant:
    """State-space data of the linearized plant.

    ``x' = A x + B1 w + B2 u``, ``y = C2 x + D21 w``, ``z = C1 x + D12 u``,
    tracked output ``E x``.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        for name in ("A", "B1", "B2", "C1", "C2", "D12", "D21", "E"):
            object.__setattr__(self, name, as_mat(getattr(self, name), name))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.B1.shape[0] != n or self.B2.shape[0] != n:
            raise ValueError("B1, B2 need n rows")
        if self.C1.shape[1] != n or self.C2.shape[1] != n or self.E.shape[1] != n:
            raise ValueError("C1, C2, E need n columns")
        if self.D12.shape != (self.C1.shape[0], self.B2.shape[1]):
            raise ValueError(f"D12 must be {self.C1.shape[0]}x{self.B2.shape[1]}")
        if self.D21.shape != (self.C2.shape[0], self.B1.shape[1]):
            raise ValueError(f"D21 must be {self.C2.shape[0]}x{self.B1.shape[1]}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B2.shape[1]

    @property
    def p(self) -> int:
        return self.C2.shape[0]

    @property
    def n_w(self) -> int:
        return self.B1.shape[1]

    def check_assumptions(self, tol: float = 1e-10) -> None:
        """Raise if (A, B2) is not stabilizable, (C2, A) not detectable, or C1'D12 != 0."""
        if not pbh_stabilizable(self.A, self.B2):
            raise ValueError("(A, B2) is not stabilizable")
        if not pbh_detectable(self.C2, self.A):
            raise ValueError("(C2, A) is not detectable")
        cross = self.C1.T @ self.D12
        if np.abs(cross).max() > tol * max(1.0, np.abs(self.C1).max() * np.abs(self.D12).max()):
            raise ValueError("C1' D12 must vanish")

    def as_nonlinear(self) -> "NonlinearPlant":
        A, B1, B2, C2, D21 = self.A, self.B1, self.B2, self.C2, self.D21
        return NonlinearPlant(
            n=self.n, m=self.m, n_w=self.n_w,
            f=lambda x, u, w: A @ x + B1 @ w + B2 @ u,
            g=lambda x, w: C2 @ x + D21 @ w,
        )


@dataclass(frozen=True)
class NonlinearPlant:
    """``x' = f(x, u, w)``, ``y = g(x, w)`` with ``f(0, 0, 0) = 0``."""

    n: int
    m: int
    n_w: int
    f: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    g: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PendulumParams:
    """Rotary (Furuta) pendulum parameters, SI units.

    ``l`` is the distance from the pivot to the pendulum's centre of mass,
    i.e. half the pendulum length.
    """

    R_m: float = 8.4          # ohm
    k_m: float = 0.042        # V s / rad
    r: float = 0.085          # m
    l: float = 0.129 / 2      # m
    m_p: float = 0.024        # kg
    g: float = 9.81           # N / kg
    b_r: float = 0.0005       # N m s / rad
    b_p: float = 0.0001       # N m s / rad
    J_r: float = 2.3060e-4    # N m s^2 / rad
    J_p: float = 1.3313e-4    # N m s^2 / rad

    def __post_init__(self):
        for name, val in self.as_dict().items():
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"pendulum parameter {name} must be positive, got {val}")
        if self.J_t <= 0:
            raise ValueError("J_p J_r - m_p^2 l^2 r^2 must be positive")

    @property
    def J_t(self) -> float:
        return self.J_p * self.J_r - (self.m_p * self.l * self.r) ** 2

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def without_damping(self) -> "PendulumParams":
        """Copy with viscous damping and motor back-emf removed (conservative model).

        The back-emf term ``-k_m^2/R_m th1'`` dissipates energy even at zero
        voltage, so ``k_m`` is zeroed as well.
        """
        # zero entries are not a valid parameter set, so bypass validation
        p = object.__new__(PendulumParams)
        for k, v in self.as_dict().items():
            object.__setattr__(p, k, 0.0 if k in ("b_r", "b_p", "k_m") else v)
        return p


# Disturbance/noise data from the linearized design model.
PENDULUM_B1 = np.diag([0.012, 0.012, 1.0, 1.0])
PENDULUM_C2 = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
PENDULUM_D21 = np.array([[0.0, 0.0, 1e-4, 0.0], [0.0, 0.0, 0.0, 1e-4]])
PENDULUM_E = np.array([[1.0, 0.0, 0.0, 0.0]])


def pendulum_mass_matrix(p: PendulumParams, theta2: float) -> np.ndarray:
    """Mass matrix of the acceleration system ``M(theta2) [th1'', th2''] = rhs``."""
    c = np.cos(theta2)
    return np.array([
        [p.J_r + p.J_p * np.sin(theta2) ** 2, -p.m_p * p.l * p.r * c],
        [-p.m_p * p.l * p.r * c, p.J_p],
    ])


def pendulum_rhs(p: PendulumParams, x, u, w=None, B1=None) -> np.ndarray:
    """State derivative of the pendulum, ``x = [th1, th2, th1', th2']``.

    ``u`` is the motor voltage (disturbances that enter through the voltage
    must already be added to it). If ``w`` is given it is added to the state
    derivative through ``B1`` (defaults to :data:`PENDULUM_B1`).
    """
    th1, th2, dth1, dth2 = np.asarray(x, dtype=float)
    u = float(np.ravel(u)[0]) if np.ndim(u) else float(u)
    s2 = np.sin(th2)
    mlr = p.m_p * p.l * p.r
    tau = p.k_m / p.R_m * (u - p.k_m * dth1)
    rhs = np.array([
        -p.J_p * dth1 * dth2 * np.sin(2 * th2) - mlr * dth2 ** 2 * s2 - p.b_r * dth1 + tau,
        0.5 * p.J_p * dth1 ** 2 * np.sin(2 * th2) + p.m_p * p.g * p.l * s2 - p.b_p * dth2,
    ])
    M = pendulum_mass_matrix(p, th2)
    if np.linalg.cond(M) > 1e12:
        raise ValueError("pendulum mass matrix is numerically singular")
    acc = np.linalg.solve(M, rhs)
    dx = np.array([dth1, dth2, acc[0], acc[1]])
    if w is not None:
        dx = dx + (PENDULUM_B1 if B1 is None else B1) @ np.asarray(w, dtype=float)
    return dx


def pendulum_energy(p: PendulumParams, x) -> float:
    """Total mechanical energy, zero potential at the upright position."""
    th1, th2, dth1, dth2 = np.asarray(x, dtype=float)
    kinetic = 0.5 * (
        (p.J_r + p.J_p * np.sin(th2) ** 2) * dth1 ** 2
        - 2.0 * p.m_p * p.l * p.r * np.cos(th2) * dth1 * dth2
        + p.J_p * dth2 ** 2
    )
    potential = p.m_p * p.g * p.l * (np.cos(th2) - 1.0)
    return float(kinetic + potential)


def pendulum_linearize(p: PendulumParams, C1=None, D12=None) -> LinearPlant:
    """Closed-form linearization about the upright equilibrium.

    ``C1``/``D12`` default to the tracking weights ``[15 E; 0]`` and
    ``[0; sqrt(2)]``.
    """
    Jt = p.J_t
    mlr = p.m_p * p.l * p.r
    A = np.array([
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, p.m_p ** 2 * p.l ** 2 * p.r * p.g / Jt,
         -p.J_p * p.b_r / Jt - p.k_m ** 2 * p.J_p / (p.R_m * Jt), -mlr * p.b_p / Jt],
        [0.0, p.J_r * p.m_p * p.g * p.l / Jt,
         -mlr * p.b_r / Jt - p.k_m ** 2 * mlr / (p.R_m * Jt), -p.J_r * p.b_p / Jt],
    ])
    B2 = np.array([[0.0], [0.0], [p.k_m * p.J_p / (p.R_m * Jt)], [p.k_m * mlr / (p.R_m * Jt)]])
    if C1 is None:
        C1 = np.array([[15.0], [0.0]]) @ PENDULUM_E
    if D12 is None:
        D12 = np.array([[0.0], [np.sqrt(2.0)]])
    return LinearPlant(A=A, B1=PENDULUM_B1, B2=B2, C1=C1, C2=PENDULUM_C2,
                       D12=D12, D21=PENDULUM_D21, E=PENDULUM_E)


def pendulum_nonlinear(p: PendulumParams) -> NonlinearPlant:
    return NonlinearPlant(
        n=4, m=1, n_w=4,
        f=lambda x, u, w: pendulum_rhs(p, x, u, w),
        g=lambda x, w: PENDULUM_C2 @ x + PENDULUM_D21 @ w,
    )


@dataclass
class LinearizationReport:
    """Per-matrix worst relative discrepancy between a linear model and finite differences."""

    errors: dict[str, float]
    worst_entry: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values())


def _rel_err(analytic, numeric, floor):
    scale = np.maximum(np.abs(numeric), floor)
    return np.abs(analytic - numeric) / scale


def verify_linearization(nl: NonlinearPlant, lp: LinearPlant, step: float = 1e-6) -> LinearizationReport:
    """Compare ``lp``'s Jacobians with central finite differences of ``nl`` at the origin.

    Entries where both the analytic and numeric value are (near) zero are
    measured in absolute terms relative to the matrix's largest entry.
    """
    if (nl.n, nl.m, nl.n_w) != (lp.n, lp.m, lp.n_w) or lp.p != len(nl.g(np.zeros(nl.n), np.zeros(nl.n_w))):
        raise ValueError("plant dimensions do not match")
    x0, u0, w0 = np.zeros(nl.n), np.zeros(nl.m), np.zeros(nl.n_w)

    def jac(fun, k):
        cols = []
        for i in range(k):
            d = np.zeros(k)
            d[i] = step
            cols.append((fun(d) - fun(-d)) / (2 * step))
        return np.column_stack(cols)

    numeric = {
        "A": jac(lambda d: nl.f(x0 + d, u0, w0), nl.n),
        "B2": jac(lambda d: nl.f(x0, u0 + d, w0), nl.m),
        "B1": jac(lambda d: nl.f(x0, u0, w0 + d), nl.n_w),
        "C2": jac(lambda d: nl.g(x0 + d, w0), nl.n),
        "D21": jac(lambda d: nl.g(x0, w0 + d), nl.n_w),
    }
    errors, worst = {}, {}
    for name, num in numeric.items():
        ana = getattr(lp, name)
        floor = max(np.abs(ana).max(), np.abs(num).max(), 1e-300)
        rel = _rel_err(ana, num, np.where((ana == 0) & (np.abs(num) < 1e-9 * floor), floor, 0.0) + 1e-300)
        idx = np.unravel_index(np.argmax(rel), rel.shape)
        errors[name] = float(rel[idx])
        worst[name] = (int(idx[0]), int(idx[1]))
    return LinearizationReport(errors, worst)


def perturbed(lp: LinearPlant, **changes) -> LinearPlant:
    return replace(lp, **changes)
