"""Design-time computations.

LQ tracking gain and adjoint feed-forward, observer gain, the generalized
plant on the (plant state, estimation error) coordinates, and the central
H-infinity filter driven by the output residual.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np
from scipy.signal import place_poles

from .linalg import (LinalgError, as_mat, care_residual, is_hurwitz, solve_care,
                     solve_hamiltonian_riccati)
from .plant import LinearPlant


class SynthesisError(RuntimeError):
    """A design stage failed; ``stage`` names it."""

    def __init__(self, stage: str, msg: str):
        super().__init__(f"{stage}: {msg}")
        self.stage = stage


class InfeasibleGammaError(SynthesisError):
    pass


# --------------------------------------------------------------------- LQT

@dataclass(frozen=True)
class LqtDesign:
    F: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    residual: float = 0.0


def design_lqt(lp: LinearPlant, Q, R) -> LqtDesign:
    """Steady-state LQ tracking gain ``F = -R^-1 B2' P`` with state weight ``E'QE``."""
    Q = as_mat(Q, "Q")
    R = as_mat(R, "R")
    if Q.shape != (lp.E.shape[0],) * 2 or R.shape != (lp.m, lp.m):
        raise SynthesisError("lqt", "weight dimensions do not match the plant")
    Qx = lp.E.T @ Q @ lp.E
    try:
        P = solve_care(lp.A, lp.B2, Qx, R)
    except LinalgError as exc:
        raise SynthesisError("lqt", str(exc)) from exc
    F = -np.linalg.solve(R, lp.B2.T @ P)
    if not is_hurwitz(lp.A + lp.B2 @ F):
        raise SynthesisError("lqt", "A + B2 F is not Hurwitz")
    res = np.linalg.norm(care_residual(lp.A, lp.B2, Qx, R, P))
    return LqtDesign(F=F, P=P, Q=Q, R=R, residual=float(res))


@dataclass(frozen=True)
class FeedforwardProfile:
    """Adjoint state ``b`` and feed-forward ``u_r = R^-1 B2' b`` on ``t = 0, h, ..., T``.

    ``bdot`` holds the adjoint derivative at the grid points so that
    :meth:`u_r_at` can interpolate between them with cubic Hermite
    polynomials (fourth-order accurate, matching RK4 stage times).
    """

    t: np.ndarray
    b: np.ndarray
    bdot: np.ndarray
    u_r: np.ndarray
    K_ff: np.ndarray

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])

    def b_at(self, t: float) -> np.ndarray:
        h = self.h
        k = min(max(int(np.floor(t / h + 1e-9)), 0), len(self.t) - 2)
        s = (t - self.t[k]) / h
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        return (h00 * self.b[k] + h10 * h * self.bdot[k]
                + h01 * self.b[k + 1] + h11 * h * self.bdot[k + 1])

    def u_r_at(self, t: float) -> np.ndarray:
        return self.K_ff @ self.b_at(t)


def _grid(T: float, h: float) -> int:
    if not (h > 0 and T > 0):
        raise ValueError("T and h must be positive")
    N = int(round(T / h))
    if abs(N * h - T) > 1e-9 * T:
        raise ValueError(f"T={T} is not an integer multiple of h={h}")
    return N


@numba.njit(cache=True)
def _adjoint_rk4(Acl_T, EQ, r_grid, r_mid, h):
    # tau = T - t runs forward: db/dtau = Acl' b + E'Q r(T - tau)
    N = r_grid.shape[0] - 1
    n = Acl_T.shape[0]
    b = np.zeros((N + 1, n))
    bk = np.zeros(n)
    for j in range(N):
        f_start = EQ @ r_grid[N - j]
        f_mid = EQ @ r_mid[N - j - 1]
        f_end = EQ @ r_grid[N - j - 1]
        k1 = Acl_T @ bk + f_start
        k2 = Acl_T @ (bk + h / 2 * k1) + f_mid
        k3 = Acl_T @ (bk + h / 2 * k2) + f_mid
        k4 = Acl_T @ (bk + h * k3) + f_end
        bk = bk + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        b[N - j - 1] = bk
    return b


def _sample(r, times, p1):
    """Evaluate ``r`` on ``times`` as a ``(len(times), p1)`` array."""
    try:
        vals = np.asarray(r(times), dtype=float)
        if vals.shape in ((len(times),), (len(times), p1)):
            return vals.reshape(len(times), p1)
    except (TypeError, ValueError):
        pass
    return np.array([np.atleast_1d(np.asarray(r(t), dtype=float)) for t in times]).reshape(len(times), p1)


def solve_feedforward(lqt: LqtDesign, lp: LinearPlant, r: Callable[[float], np.ndarray],
                      T: float, h: float) -> FeedforwardProfile:
    """Integrate ``-b' = (A + B2 F)' b + E'Q r``, ``b(T) = 0`` backwards with RK4.

    ``r`` maps a time (or an array of times) to the reference value(s),
    ``p1`` per time.
    """
    N = _grid(T, h)
    p1 = lp.E.shape[0]
    Acl_T = np.ascontiguousarray((lp.A + lp.B2 @ lqt.F).T)
    EQ = np.ascontiguousarray(lp.E.T @ lqt.Q)
    t = np.arange(N + 1) * h
    r_grid = np.ascontiguousarray(_sample(r, t, p1))
    r_mid = np.ascontiguousarray(_sample(r, t[:-1] + h / 2, p1))
    b = _adjoint_rk4(Acl_T, EQ, r_grid, r_mid, h)
    bdot = -(b @ Acl_T.T) - r_grid @ EQ.T
    K_ff = np.linalg.solve(lqt.R, lp.B2.T)
    return FeedforwardProfile(t=t, b=b, bdot=bdot, u_r=b @ K_ff.T, K_ff=K_ff)


# ---------------------------------------------------------------- observer

@dataclass(frozen=True)
class ObserverDesign:
    L: np.ndarray
    method: str = "care"
    Y: np.ndarray | None = None

    def eigenvalues(self, lp: LinearPlant) -> np.ndarray:
        return np.linalg.eigvals(lp.A + self.L @ lp.C2)


def design_observer(lp: LinearPlant, W_proc, W_meas) -> ObserverDesign:
    """Kalman-type observer gain ``L = -Y C2' W_meas^-1`` from the dual CARE."""
    W_proc = as_mat(W_proc, "W_proc")
    W_meas = as_mat(W_meas, "W_meas")
    try:
        Y = solve_care(lp.A.T, lp.C2.T, W_proc, W_meas)
    except LinalgError as exc:
        raise SynthesisError("observer", str(exc)) from exc
    L = -Y @ lp.C2.T @ np.linalg.inv(W_meas)
    if not is_hurwitz(lp.A + L @ lp.C2):
        raise SynthesisError("observer", "A + L C2 is not Hurwitz")
    return ObserverDesign(L=L, method="care", Y=Y)


def design_observer_poles(lp: LinearPlant, poles) -> ObserverDesign:
    """Observer gain placing ``eig(A + L C2)`` at ``poles`` (closed under conjugation)."""
    poles = np.asarray(poles, dtype=complex)
    if poles.shape != (lp.n,) or np.max(poles.real) >= 0:
        raise SynthesisError("observer", "need n poles in the open left half-plane")
    try:
        K = place_poles(lp.A.T, lp.C2.T, poles).gain_matrix
    except ValueError as exc:
        raise SynthesisError("observer", str(exc)) from exc
    L = -K.T
    if not is_hurwitz(lp.A + L @ lp.C2):
        raise SynthesisError("observer", "A + L C2 is not Hurwitz")
    return ObserverDesign(L=L, method="poles")


# ------------------------------------------------------- generalized plant

@dataclass(frozen=True)
class GeneralizedPlant:
    """``x' = A x + B1 w + B2 u``, ``z = C1 x + D11 w + D12 u``, ``y = C2 x + D21 w + D22 u``."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    D22: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]


def build_augmented_plant(lp: LinearPlant, lqt: LqtDesign, obs: ObserverDesign) -> GeneralizedPlant:
    """Plant seen by the residual filter, state ``(x, e)`` with ``e = x - x_hat``.

    Input ``w`` and filter output ``u_f``; measured output is the residual
    ``f = y_hat - y = -C2 e - D21 w``; performance output
    ``z = C1 x + D12 (F x - F e + u_f)``.
    """
    n = lp.n
    F, L = lqt.F, obs.L
    if F.shape != (lp.m, n) or L.shape != (n, lp.p):
        raise ValueError("design dimensions do not match the plant")
    Z = np.zeros((n, n))
    A = np.block([[lp.A + lp.B2 @ F, -lp.B2 @ F], [Z, lp.A + L @ lp.C2]])
    B1 = np.vstack([lp.B1, lp.B1 + L @ lp.D21])
    B2 = np.vstack([lp.B2, np.zeros((n, lp.m))])
    C1 = np.hstack([lp.C1 + lp.D12 @ F, -lp.D12 @ F])
    C2 = np.hstack([np.zeros((lp.p, n)), -lp.C2])
    return GeneralizedPlant(
        A=A, B1=B1, B2=B2, C1=C1, C2=C2,
        D11=np.zeros((C1.shape[0], B1.shape[1])), D12=lp.D12.copy(),
        D21=-lp.D21, D22=np.zeros((lp.p, lp.m)),
    )


# ------------------------------------------------------------------ H-inf

@dataclass(frozen=True)
class FilterQ:
    """Residual filter ``x_q' = A_q x_q + B_q f``, ``u_f = F_q x_q``."""

    A_q: np.ndarray
    B_q: np.ndarray
    F_q: np.ndarray
    gamma: float
    achieved: float = float("nan")
    info: dict = field(default_factory=dict)

    @property
    def n_q(self) -> int:
        return self.A_q.shape[0]


def _regularize(gp: GeneralizedPlant, eps: float):
    """Return (gp, eps_used) with D21 made full row rank if needed."""
    sv = np.linalg.svd(gp.D21, compute_uv=False) if gp.D21.size else np.zeros(0)
    if len(sv) == gp.D21.shape[0] and sv.min() > 1e-14 * max(1.0, np.abs(gp.B1).max()):
        return gp, 0.0
    p = gp.C2.shape[0]
    B1 = np.hstack([gp.B1, np.zeros((gp.n, p))])
    D21 = np.hstack([gp.D21, eps * np.eye(p)])
    D11 = np.hstack([gp.D11, np.zeros((gp.D11.shape[0], p))])
    return GeneralizedPlant(gp.A, B1, gp.B2, gp.C1, gp.C2, D11, gp.D12, D21, gp.D22), eps


def _hinf_riccatis(gp: GeneralizedPlant, gamma: float):
    """X and Y Riccati solutions of the two-Riccati (DGKF) formulas, D11 = D22 = 0."""
    A, B1, B2, C1, C2, D12, D21 = gp.A, gp.B1, gp.B2, gp.C1, gp.C2, gp.D12, gp.D21
    g2 = gamma ** 2
    R1 = D12.T @ D12
    R2 = D21 @ D21.T
    # control Riccati, cross term D12'C1 removed by a feedback pre-shift
    At = A - B2 @ np.linalg.solve(R1, D12.T @ C1)
    Ct = C1.T @ (np.eye(C1.shape[0]) - D12 @ np.linalg.solve(R1, D12.T)) @ C1
    X = solve_hamiltonian_riccati(At, B2 @ np.linalg.solve(R1, B2.T) - B1 @ B1.T / g2, Ct)
    # filter Riccati, cross term B1 D21' removed by an output-injection pre-shift
    Ah = A - B1 @ D21.T @ np.linalg.solve(R2, C2)
    Bt = B1 @ (np.eye(B1.shape[1]) - D21.T @ np.linalg.solve(R2, D21)) @ B1.T
    Y = solve_hamiltonian_riccati(Ah.T, C2.T @ np.linalg.solve(R2, C2) - C1.T @ C1 / g2, Bt)
    return X, Y, R1, R2


def _psd(M) -> bool:
    return np.linalg.eigvalsh(M).min() >= -1e-9 * max(1.0, np.linalg.norm(M, 2))


def hinf_feasible(gp: GeneralizedPlant, gamma: float) -> bool:
    """Whether a stabilizing filter with closed-loop norm below ``gamma`` exists."""
    try:
        X, Y, _, _ = _hinf_riccatis(gp, gamma)
    except (LinalgError, np.linalg.LinAlgError):
        return False
    if not (_psd(X) and _psd(Y)):
        return False
    return float(np.max(np.abs(np.linalg.eigvals(X @ Y)))) < gamma ** 2


def synthesize_qfilter(gp: GeneralizedPlant, gamma: float, eps: float = 1e-6,
                       check_tol: float = 1e-6) -> FilterQ:
    """Central H-infinity filter from the residual ``f`` to ``u_f``.

    Raises :class:`InfeasibleGammaError` when ``gamma`` is at or below the
    optimal level. The closed-loop norm is always re-evaluated afterwards and
    stored as ``achieved``.
    """
    if not gamma > 0:
        raise SynthesisError("hinf", "gamma must be positive")
    if np.any(gp.D11) or np.any(gp.D22):
        raise SynthesisError("hinf", "only D11 = 0 and D22 = 0 are supported")
    if np.linalg.matrix_rank(gp.D12) < gp.D12.shape[1]:
        raise SynthesisError("hinf", "D12 must have full column rank")
    gp, eps_used = _regularize(gp, eps)

    try:
        X, Y, R1, R2 = _hinf_riccatis(gp, gamma)
    except (LinalgError, np.linalg.LinAlgError) as exc:
        raise InfeasibleGammaError("hinf", f"gamma={gamma:g}: Riccati equation has no stabilizing solution ({exc})") from exc
    if not _psd(X):
        raise InfeasibleGammaError("hinf", f"gamma={gamma:g}: control Riccati solution is not PSD")
    if not _psd(Y):
        raise InfeasibleGammaError("hinf", f"gamma={gamma:g}: filter Riccati solution is not PSD")
    rho = float(np.max(np.abs(np.linalg.eigvals(X @ Y))))
    if rho >= gamma ** 2:
        raise InfeasibleGammaError("hinf", f"gamma={gamma:g}: coupling condition fails, rho(XY)={rho:.4g}")

    g2 = gamma ** 2
    A, B1, B2, C1, C2, D12, D21 = gp.A, gp.B1, gp.B2, gp.C1, gp.C2, gp.D12, gp.D21
    F_inf = -np.linalg.solve(R1, B2.T @ X + D12.T @ C1)
    L_inf = -(Y @ C2.T + B1 @ D21.T) @ np.linalg.inv(R2)
    Zi = np.linalg.inv(np.eye(gp.n) - Y @ X / g2)
    A_q = A + B1 @ B1.T @ X / g2 + B2 @ F_inf + Zi @ L_inf @ (C2 + D21 @ B1.T @ X / g2)
    B_q = -Zi @ L_inf
    F_q = F_inf
    if not is_hurwitz(A_q):
        raise SynthesisError("hinf", "central filter is not stable (A_q not Hurwitz)")

    Acl, Bcl, Ccl, Dcl = closed_loop_hinf(gp, A_q, B_q, F_q)
    if not is_hurwitz(Acl):
        raise SynthesisError("hinf", "closed loop is not stable")
    achieved = hinf_norm(Acl, Bcl, Ccl, Dcl, tol=check_tol)
    if achieved >= gamma:
        raise SynthesisError("hinf", f"a posteriori norm {achieved:.6g} is not below gamma={gamma:g}")
    info = {"rho_XY": rho, "eps": eps_used,
            "X_min_eig": float(np.linalg.eigvalsh(X).min()),
            "Y_min_eig": float(np.linalg.eigvalsh(Y).min())}
    return FilterQ(A_q=A_q, B_q=B_q, F_q=F_q, gamma=float(gamma), achieved=float(achieved), info=info)


def closed_loop_hinf(gp: GeneralizedPlant, A_q, B_q, F_q):
    """Interconnect ``gp`` with the filter; returns the ``w -> z`` realization."""
    Acl = np.block([[gp.A, gp.B2 @ F_q], [B_q @ gp.C2, A_q + B_q @ gp.D22 @ F_q]])
    Bcl = np.vstack([gp.B1, B_q @ gp.D21])
    Ccl = np.hstack([gp.C1, gp.D12 @ F_q])
    return Acl, Bcl, Ccl, gp.D11.copy()


def gamma_optimal(gp: GeneralizedPlant, lo: float = 1e-6, hi: float = 1e6, rtol: float = 1e-6,
                  eps: float = 1e-6) -> float:
    """Infimal feasible level by bisection on :func:`hinf_feasible`."""
    gp, _ = _regularize(gp, eps)
    if not hinf_feasible(gp, hi):
        raise InfeasibleGammaError("hinf", f"not feasible even at gamma={hi:g}")
    if hinf_feasible(gp, lo):
        return lo
    while hi - lo > rtol * hi:
        mid = np.sqrt(lo * hi)
        if hinf_feasible(gp, mid):
            hi = mid
        else:
            lo = mid
    return hi


def freqresp(A, B, C, D, w) -> np.ndarray:
    """``G(jw)`` for each frequency in ``w``, shape ``(len(w), p, m)``."""
    A, B, C, D = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A, B, C, D))
    n = A.shape[0]
    eye = np.eye(n)
    return np.array([C @ np.linalg.solve(1j * wi * eye - A, B) + D for wi in np.atleast_1d(w)])


def _sigma_max(A, B, C, D, w):
    return np.linalg.svd(freqresp(A, B, C, D, [w])[0], compute_uv=False)[0]


def hinf_norm(A, B, C, D=None, tol: float = 1e-8, maxiter: int = 200) -> float:
    """L-infinity norm of a stable system by bisection on the Hamiltonian test.

    A level ``g`` is below the norm exactly when
    ``[[A + B S^-1 D'C, B S^-1 B'], [-C'(I + D S^-1 D')C, -(A + B S^-1 D'C)']]``,
    ``S = g^2 I - D'D``, has an eigenvalue on the imaginary axis. Frequencies
    found at a failing level give exact lower bounds and tighten the bracket.
    """
    A, B, C = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A, B, C))
    D = np.zeros((C.shape[0], B.shape[1])) if D is None else np.atleast_2d(np.asarray(D, dtype=float))
    if not is_hurwitz(A):
        raise LinalgError("hinf_norm needs a stable system")
    sd = np.linalg.svd(D, compute_uv=False)[0] if D.size else 0.0
    if not np.any(B) or not np.any(C):
        return float(sd)
    poles = np.linalg.eigvals(A)
    probe = [0.0] + [abs(p.imag) for p in poles] + [abs(p) for p in poles]
    lo = max([sd] + [_sigma_max(A, B, C, D, w) for w in probe])
    if lo == 0.0:
        return 0.0

    def crossings(g):
        """Imaginary-axis eigenvalue frequencies of the level-``g`` Hamiltonian."""
        S = g * g * np.eye(D.shape[1]) - D.T @ D
        Si = np.linalg.inv(S)
        Ah = A + B @ Si @ D.T @ C
        H = np.block([[Ah, B @ Si @ B.T],
                      [-C.T @ (np.eye(C.shape[0]) + D @ Si @ D.T) @ C, -Ah.T]])
        ev = np.linalg.eigvals(H)
        scale = max(np.linalg.norm(H, 1), 1.0)
        return [abs(e.imag) for e in ev if abs(e.real) < 1e-7 * scale]

    def below_norm(g):
        """Return a certified lower bound >= g if ``g`` is below the norm, else None."""
        ws = sorted(crossings(g))
        if not ws:
            return None
        # the peak lies between consecutive crossings
        ws = ws + [0.5 * (a + b) for a, b in zip(ws[:-1], ws[1:])]
        best = max(_sigma_max(A, B, C, D, w) for w in ws)
        if best < g * (1.0 - 1e-9):
            return None
        return max(best, g)

    hi = 2.0 * lo
    for _ in range(200):
        found = below_norm(hi)
        if found is None:
            break
        lo = max(lo, found)
        hi = 2.0 * found
    for _ in range(maxiter):
        if hi - lo <= tol * lo:
            break
        mid = 0.5 * (lo + hi)
        found = below_norm(mid)
        if found is None:
            hi = mid
        else:
            lo = min(found, hi)
    return float(0.5 * (lo + hi))
