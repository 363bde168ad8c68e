"""Output-feedback tracking controller with the scaled residual filter.

Controller state is ``x_c = (x_q, x_hat)``::

    x_c' = A_c x_c + B_c y + B_r u_r
    u    = F_c x_c + u_r

    A_c = [[A_q, B_q C2], [alpha B2 F_q, A + B2 F + L C2]]
    B_c = [[-B_q], [-L]],  B_r = [[0], [B2]],  F_c = [alpha F_q, F]
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import is_hurwitz
from .plant import LinearPlant
from .synthesis import FilterQ, LqtDesign, ObserverDesign, freqresp


@dataclass(frozen=True)
class FilterQAlpha:
    """Residual filter with its output map scaled by ``alpha``."""

    base: FilterQ
    alpha: float

    @property
    def F_q(self) -> np.ndarray:
        return self.alpha * self.base.F_q


class TrackingController:
    def __init__(self, A_c, B_c, B_r, F_c, n_q: int, alpha: float):
        self.A_c = np.asarray(A_c, dtype=float)
        self.B_c = np.asarray(B_c, dtype=float)
        self.B_r = np.asarray(B_r, dtype=float)
        self.F_c = np.asarray(F_c, dtype=float)
        self.n_q = n_q
        self.alpha = float(alpha)
        self.x_c = np.zeros(self.A_c.shape[0])

    def reset(self) -> None:
        self.x_c = np.zeros(self.A_c.shape[0])

    @property
    def x_q(self) -> np.ndarray:
        return self.x_c[: self.n_q]

    @property
    def x_hat(self) -> np.ndarray:
        return self.x_c[self.n_q:]

    def output(self, u_r) -> np.ndarray:
        return self.F_c @ self.x_c + np.atleast_1d(u_r)

    def step(self, y, u_r, h: float) -> np.ndarray:
        """Advance ``x_c`` by one RK4 step with ``y`` and ``u_r`` held; return ``u`` at the step start."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        u_r = np.atleast_1d(np.asarray(u_r, dtype=float))
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(u_r))):
            raise FloatingPointError("non-finite controller input")
        u = self.output(u_r)
        drive = self.B_c @ y + self.B_r @ u_r
        x = self.x_c
        k1 = self.A_c @ x + drive
        k2 = self.A_c @ (x + h / 2 * k1) + drive
        k3 = self.A_c @ (x + h / 2 * k2) + drive
        k4 = self.A_c @ (x + h * k3) + drive
        self.x_c = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return u


def assemble_controller(lqt: LqtDesign, obs: ObserverDesign, filt: FilterQAlpha,
                        lp: LinearPlant) -> TrackingController:
    q = filt.base
    n, nq = lp.n, q.n_q
    if q.B_q.shape[1] != lp.p or q.F_q.shape != (lp.m, nq) or lqt.F.shape != (lp.m, n):
        raise ValueError("controller blocks have inconsistent dimensions")
    a = filt.alpha
    A_c = np.block([
        [q.A_q, q.B_q @ lp.C2],
        [a * lp.B2 @ q.F_q, lp.A + lp.B2 @ lqt.F + obs.L @ lp.C2],
    ])
    B_c = np.vstack([-q.B_q, -obs.L])
    B_r = np.vstack([np.zeros((nq, lp.m)), lp.B2])
    F_c = np.hstack([a * q.F_q, lqt.F])
    return TrackingController(A_c, B_c, B_r, F_c, nq, a)


def closed_loop_matrix(ctrl: TrackingController, lp: LinearPlant):
    """Closed-loop state matrix of the linear plant with the controller.

    Returns ``(A_bar, A_cl, T)``: ``A_cl`` acts on ``(x, x_q, x_hat)`` and
    ``A_bar = T A_cl T^-1`` on ``(x, x_q, x_hat - x)``, where it is block
    upper-triangular with diagonal blocks ``A + B2 F``, ``A_q``, ``A + L C2``.
    """
    n, nq = lp.n, ctrl.n_q
    A_cl = np.block([
        [lp.A, lp.B2 @ ctrl.F_c],
        [ctrl.B_c @ lp.C2, ctrl.A_c],
    ])
    N = n + nq + n
    T = np.eye(N)
    T[n + nq:, :n] = -np.eye(n)
    Tinv = T.copy()
    Tinv[n + nq:, :n] = np.eye(n)
    A_bar = T @ A_cl @ Tinv
    return A_bar, A_cl, T


def ur_interconnection(ctrl: TrackingController, lp: LinearPlant, channel: str):
    """State-space realization from ``u_r`` to ``channel`` in {'u', 'y', 'ytilde'}."""
    _, A_cl, _ = closed_loop_matrix(ctrl, lp)
    B = np.vstack([lp.B2, ctrl.B_r])
    n = lp.n
    nc = ctrl.A_c.shape[0]
    if channel == "u":
        C = np.hstack([np.zeros((lp.m, n)), ctrl.F_c])
        D = np.eye(lp.m)
    elif channel == "y":
        C = np.hstack([lp.C2, np.zeros((lp.p, nc))])
        D = np.zeros((lp.p, lp.m))
    elif channel == "ytilde":
        C = np.hstack([lp.E, np.zeros((lp.E.shape[0], nc))])
        D = np.zeros((lp.E.shape[0], lp.m))
    else:
        raise ValueError(f"unknown channel {channel!r}")
    return A_cl, B, C, D


def transfer_from_ur(ctrl: TrackingController, lp: LinearPlant, channel: str, w) -> np.ndarray:
    """Frequency response from the feed-forward input to ``channel`` at ``s = j w``."""
    A, B, C, D = ur_interconnection(ctrl, lp, channel)
    if not is_hurwitz(A):
        raise ValueError("closed loop is not stable")
    return freqresp(A, B, C, D, w)
