"""Closed-loop scenario engine.

The plant (pendulum or a linear model) and the controller are integrated
together with one fixed-step RK4 scheme. Inside a step the control is
re-evaluated at every stage from the current controller state, the
feed-forward is interpolated, and the disturbance is evaluated at the
stage time; measurement noise is held over the step.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.integrate import trapezoid

from .controller import FilterQAlpha, TrackingController, assemble_controller
from .plant import LinearPlant, PendulumParams
from .signals import Signal, WhiteNoise
from .synthesis import FeedforwardProfile, FilterQ, LqtDesign, ObserverDesign, solve_feedforward

log = logging.getLogger(__name__)

DIVERGED_COST = 1e12
_PARAM_ORDER = ("R_m", "k_m", "r", "l", "m_p", "g", "b_r", "b_p", "J_r", "J_p")


@dataclass(frozen=True)
class Scenario:
    """One repeatable closed-loop experiment.

    ``plant`` is either :class:`PendulumParams` (nonlinear simulation) or a
    :class:`LinearPlant` (linear substitution). The disturbance is a scalar
    signal times ``disturbance_dir``; with ``disturbance_channel='input'`` it
    is added to the control voltage (``dir`` has ``m`` entries), with
    ``'state'`` it enters the state derivative through ``B1`` (``dir`` has
    ``n_w`` entries).
    """

    plant: PendulumParams | LinearPlant
    reference: Signal
    T: float
    h: float
    Q: np.ndarray
    R: np.ndarray
    disturbance: Signal = Signal()
    disturbance_channel: str = "input"
    disturbance_dir: np.ndarray | None = None
    noise: WhiteNoise = WhiteNoise()
    x0: np.ndarray | None = None
    name: str = "scenario"

    def __post_init__(self):
        if not (self.T > 0 and self.h > 0):
            raise ValueError("T and h must be positive")
        if abs(round(self.T / self.h) * self.h - self.T) > 1e-9 * self.T:
            raise ValueError("T must be an integer multiple of h")
        if self.disturbance_channel not in ("input", "state"):
            raise ValueError("disturbance_channel must be 'input' or 'state'")
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.h))


@dataclass
class RunTrace:
    t: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    x_q: np.ndarray
    u: np.ndarray
    u_r: np.ndarray
    u_f: np.ndarray
    y: np.ndarray
    ytilde: np.ndarray
    r: np.ndarray
    J: float
    diverged: bool = False
    alpha: float = float("nan")
    meta: dict = field(default_factory=dict)


# ------------------------------------------------------------------ kernel

@numba.njit(cache=True, nogil=True)
def _sig(code, a, f, rate, t):
    if code == 0:
        return 0.0
    if code == 1:
        return a
    if code == 2:
        half = math.floor(2.0 * f * t + 1e-9)
        return a if half % 2.0 == 0.0 else -a
    if code == 3:
        return a * math.sin(f * t)
    return a * math.exp(-rate * t)


@numba.njit(cache=True, nogil=True)
def pendulum_accel(pp, th2, dth1, dth2, u):
    """Angular accelerations of the pendulum (2x2 mass matrix solved by Cramer's rule)."""
    R_m, k_m, r, l, m_p, g, b_r, b_p, J_r, J_p = (pp[0], pp[1], pp[2], pp[3], pp[4],
                                                 pp[5], pp[6], pp[7], pp[8], pp[9])
    s2 = math.sin(th2)
    c2 = math.cos(th2)
    sin2 = math.sin(2.0 * th2)
    mlr = m_p * l * r
    tau = k_m / R_m * (u - k_m * dth1)
    f1 = -J_p * dth1 * dth2 * sin2 - mlr * dth2 * dth2 * s2 - b_r * dth1 + tau
    f2 = 0.5 * J_p * dth1 * dth1 * sin2 + m_p * g * l * s2 - b_p * dth2
    m11 = J_r + J_p * s2 * s2
    m12 = -mlr * c2
    m22 = J_p
    det = m11 * m22 - m12 * m12
    return (m22 * f1 - m12 * f2) / det, (m11 * f2 - m12 * f1) / det


@numba.njit(cache=True, nogil=True)
def _deriv(t, s, kind, pp, A_lin, B2_lin, B1, C2, A_c, B_c, B_r, F_c,
           dcode, dpar, dchan, ddir, noise_k, bk, bk1, dbk, dbk1, sfrac, h, K_ff,
           out, y, u_r, u):
    n = C2.shape[1]
    nc = A_c.shape[0]
    m = F_c.shape[0]
    p = C2.shape[0]
    # feed-forward by cubic Hermite interpolation of the adjoint state
    s_ = sfrac
    h00 = 2 * s_ ** 3 - 3 * s_ ** 2 + 1
    h10 = s_ ** 3 - 2 * s_ ** 2 + s_
    h01 = -2 * s_ ** 3 + 3 * s_ ** 2
    h11 = s_ ** 3 - s_ ** 2
    for i in range(m):
        acc = 0.0
        for j in range(n):
            bj = h00 * bk[j] + h10 * h * dbk[j] + h01 * bk1[j] + h11 * h * dbk1[j]
            acc += K_ff[i, j] * bj
        u_r[i] = acc
    for i in range(m):
        acc = u_r[i]
        for j in range(nc):
            acc += F_c[i, j] * s[n + j]
        u[i] = acc
    for i in range(p):
        acc = noise_k[i]
        for j in range(n):
            acc += C2[i, j] * s[j]
        y[i] = acc
    wt = _sig(dcode, dpar[0], dpar[1], dpar[2], t)
    # plant
    if kind == 0:
        v = u[0]
        if dchan == 0:
            v += ddir[0] * wt
        a1, a2 = pendulum_accel(pp, s[1], s[2], s[3], v)
        out[0] = s[2]
        out[1] = s[3]
        out[2] = a1
        out[3] = a2
    else:
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += A_lin[i, j] * s[j]
            for j in range(m):
                v = u[j]
                if dchan == 0:
                    v += ddir[j] * wt
                acc += B2_lin[i, j] * v
            out[i] = acc
    if dchan == 1:
        for i in range(n):
            acc = 0.0
            for j in range(B1.shape[1]):
                acc += B1[i, j] * ddir[j]
            out[i] += acc * wt
    # controller
    for i in range(nc):
        acc = 0.0
        for j in range(nc):
            acc += A_c[i, j] * s[n + j]
        for j in range(p):
            acc += B_c[i, j] * y[j]
        for j in range(m):
            acc += B_r[i, j] * u_r[j]
        out[n + i] = acc


@numba.njit(cache=True, nogil=True)
def _run(kind, pp, A_lin, B2_lin, B1, C2, E, x0, A_c, B_c, B_r, F_c, n_q,
         rcode, rpar, dcode, dpar, dchan, ddir, noise, b, bdot, K_ff, Qm, Rm,
         h, N, decim):
    n = C2.shape[1]
    nc = A_c.shape[0]
    m = F_c.shape[0]
    p = C2.shape[0]
    p1 = E.shape[0]
    ns = n + nc
    n_rec = N // decim + 1
    rec = np.full((n_rec, 1 + n + nc + 3 * m + p + 2 * p1), np.nan)

    s = np.zeros(ns)
    for i in range(n):
        s[i] = x0[i]
    k1 = np.zeros(ns)
    k2 = np.zeros(ns)
    k3 = np.zeros(ns)
    k4 = np.zeros(ns)
    tmp = np.zeros(ns)
    y = np.zeros(p)
    u_r = np.zeros(m)
    u = np.zeros(m)
    err = np.zeros(p1)

    integral = 0.0
    prev = 0.0
    diverged = False
    last = N
    for k in range(N + 1):
        t = k * h
        kk = k if k < N else N - 1
        sfr = 0.0 if k < N else 1.0
        # outputs at the grid point
        _deriv(t, s, kind, pp, A_lin, B2_lin, B1, C2, A_c, B_c, B_r, F_c,
               dcode, dpar, dchan, ddir, noise[k], b[kk], b[kk + 1], bdot[kk], bdot[kk + 1],
               sfr, h, K_ff, k1, y, u_r, u)
        for i in range(p1):
            acc = -_sig(rcode[i], rpar[i, 0], rpar[i, 1], rpar[i, 2], t)
            for j in range(n):
                acc += E[i, j] * s[j]
            err[i] = acc
        cost = 0.0
        for i in range(p1):
            for j in range(p1):
                cost += err[i] * Qm[i, j] * err[j]
        for i in range(m):
            for j in range(m):
                cost += u[i] * Rm[i, j] * u[j]
        if k > 0:
            integral += 0.5 * h * (prev + cost)
        prev = cost
        if k % decim == 0:
            row = k // decim
            c = 0
            rec[row, c] = t
            c += 1
            for i in range(ns):
                rec[row, c] = s[i]
                c += 1
            for i in range(m):
                rec[row, c] = u[i]
                rec[row, c + m] = u_r[i]
                uf = 0.0
                for j in range(n_q):
                    uf += F_c[i, j] * s[n + j]
                rec[row, c + 2 * m] = uf
                c += 1
            c += 2 * m
            for i in range(p):
                rec[row, c] = y[i]
                c += 1
            for i in range(p1):
                rec[row, c] = err[i] + _sig(rcode[i], rpar[i, 0], rpar[i, 1], rpar[i, 2], t)
                rec[row, c + p1] = _sig(rcode[i], rpar[i, 0], rpar[i, 1], rpar[i, 2], t)
                c += 1
        if k == N:
            break
        # RK4 step k -> k+1
        nk = noise[k]
        bk = b[k]
        bk1 = b[k + 1]
        dbk = bdot[k]
        dbk1 = bdot[k + 1]
        # k1 is the grid-point derivative computed above
        for i in range(ns):
            tmp[i] = s[i] + 0.5 * h * k1[i]
        _deriv(t + 0.5 * h, tmp, kind, pp, A_lin, B2_lin, B1, C2, A_c, B_c, B_r, F_c,
               dcode, dpar, dchan, ddir, nk, bk, bk1, dbk, dbk1, 0.5, h, K_ff, k2, y, u_r, u)
        for i in range(ns):
            tmp[i] = s[i] + 0.5 * h * k2[i]
        _deriv(t + 0.5 * h, tmp, kind, pp, A_lin, B2_lin, B1, C2, A_c, B_c, B_r, F_c,
               dcode, dpar, dchan, ddir, nk, bk, bk1, dbk, dbk1, 0.5, h, K_ff, k3, y, u_r, u)
        for i in range(ns):
            tmp[i] = s[i] + h * k3[i]
        _deriv(t + h, tmp, kind, pp, A_lin, B2_lin, B1, C2, A_c, B_c, B_r, F_c,
               dcode, dpar, dchan, ddir, nk, bk, bk1, dbk, dbk1, 1.0, h, K_ff, k4, y, u_r, u)
        finite = True
        for i in range(ns):
            s[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not math.isfinite(s[i]):
                finite = False
        if not finite:
            diverged = True
            last = k + 1
            break
    T = N * h
    J = integral / T
    if diverged or not math.isfinite(J):
        return 1e12, True, last, rec
    return J, False, last, rec


# --------------------------------------------------------------- harness

def pendulum_param_vector(p: PendulumParams) -> np.ndarray:
    return np.array([getattr(p, k) for k in _PARAM_ORDER], dtype=float)


def _reference_arrays(sig, p1):
    sigs = sig if isinstance(sig, (list, tuple)) else [sig] * p1
    codes = np.array([s.code for s in sigs], dtype=np.int64)
    pars = np.array([s.params for s in sigs], dtype=float).reshape(p1, 3)
    return codes, pars


def reference_function(sc: Scenario, p1: int = 1):
    """Vectorized reference ``t -> (len(t), p1)`` array."""
    sigs = sc.reference if isinstance(sc.reference, (list, tuple)) else [sc.reference] * p1

    def r(t):
        return np.stack([np.broadcast_to(s(t), np.shape(t)) for s in sigs], axis=-1)
    return r


def simulate_run(sc: Scenario, ctrl: TrackingController, ff: FeedforwardProfile,
                 lp: LinearPlant, decimate: int = 1, record: bool = True) -> RunTrace:
    """Run the closed loop over ``[0, T]`` and return the trace and cost.

    ``lp`` supplies ``C2``, ``E`` and ``B1`` (and the dynamics when
    ``sc.plant`` is linear). A run whose state turns non-finite is cut short,
    flagged ``diverged`` and assigned :data:`DIVERGED_COST`.
    """
    N = sc.n_steps
    if len(ff.t) != N + 1 or abs(ff.h - sc.h) > 1e-12 * sc.h:
        raise ValueError("feed-forward grid does not match the scenario")
    n, m, p = lp.n, lp.m, lp.p
    if ctrl.B_c.shape[1] != p or ctrl.F_c.shape[0] != m:
        raise ValueError("controller does not match the plant")
    if isinstance(sc.plant, PendulumParams):
        kind, pp = 0, pendulum_param_vector(sc.plant)
        if m != 1 or n != 4:
            raise ValueError("pendulum runs need the 4-state, 1-input linearization")
        A_lin, B2_lin = lp.A, lp.B2
    else:
        kind, pp = 1, np.zeros(10)
        A_lin, B2_lin = sc.plant.A, sc.plant.B2
    dchan = 0 if sc.disturbance_channel == "input" else 1
    if sc.disturbance_dir is None:
        ddir = np.ones(m) if dchan == 0 else np.ones(lp.n_w)
    else:
        ddir = np.asarray(sc.disturbance_dir, dtype=float).ravel()
    if len(ddir) != (m if dchan == 0 else lp.n_w):
        raise ValueError("disturbance direction has the wrong length")
    x0 = np.zeros(n) if sc.x0 is None else np.asarray(sc.x0, dtype=float)
    p1 = lp.E.shape[0]
    rcode, rpar = _reference_arrays(sc.reference, p1)
    noise = sc.noise.samples(N + 1, p)
    decim = max(1, int(decimate)) if record else N
    J, diverged, last, rec = _run(
        kind, pp, np.ascontiguousarray(A_lin), np.ascontiguousarray(B2_lin),
        np.ascontiguousarray(lp.B1), np.ascontiguousarray(lp.C2), np.ascontiguousarray(lp.E),
        x0, np.ascontiguousarray(ctrl.A_c), np.ascontiguousarray(ctrl.B_c),
        np.ascontiguousarray(ctrl.B_r), np.ascontiguousarray(ctrl.F_c), ctrl.n_q,
        rcode, rpar, sc.disturbance.code, sc.disturbance.params, dchan, ddir, noise,
        np.ascontiguousarray(ff.b), np.ascontiguousarray(ff.bdot), np.ascontiguousarray(ff.K_ff),
        np.ascontiguousarray(sc.Q), np.ascontiguousarray(sc.R), sc.h, N, decim)
    if diverged:
        log.warning("run %s (alpha=%g) diverged at step %d", sc.name, ctrl.alpha, last)
        rec = rec[: last // decim + 1]
        rec = rec[np.isfinite(rec[:, 0])]
    nc = ctrl.A_c.shape[0]
    c = 1
    x = rec[:, c:c + n]
    c += n
    xc = rec[:, c:c + nc]
    c += nc
    u, u_r, u_f = rec[:, c:c + m], rec[:, c + m:c + 2 * m], rec[:, c + 2 * m:c + 3 * m]
    c += 3 * m
    y = rec[:, c:c + p]
    c += p
    return RunTrace(
        t=rec[:, 0], x=x, x_hat=xc[:, ctrl.n_q:], x_q=xc[:, :ctrl.n_q], u=u, u_r=u_r, u_f=u_f,
        y=y, ytilde=rec[:, c:c + p1], r=rec[:, c + p1:c + 2 * p1], J=float(J),
        diverged=bool(diverged), alpha=ctrl.alpha, meta={"steps": int(last), "decimate": decim},
    )


def evaluate_cost(trace: RunTrace, Q, R) -> float:
    """Mean tracking cost over the trace grid by the composite trapezoidal rule."""
    Q = np.atleast_2d(Q)
    R = np.atleast_2d(R)
    e = trace.ytilde - trace.r
    integrand = np.einsum("ki,ij,kj->k", e, Q, e) + np.einsum("ki,ij,kj->k", trace.u, R, trace.u)
    T = trace.t[-1] - trace.t[0]
    return float(trapezoid(integrand, trace.t) / T)


# ----------------------------------------------------------- design bundle

@dataclass(frozen=True)
class Design:
    """Everything the loop needs except the gain factor alpha."""

    lp: LinearPlant
    lqt: LqtDesign
    obs: ObserverDesign
    qfilter: FilterQ

    def controller(self, alpha: float) -> TrackingController:
        return assemble_controller(self.lqt, self.obs, FilterQAlpha(self.qfilter, alpha), self.lp)


class LoopRunner:
    """Scenario plus design with a cached feed-forward profile; ``J(alpha)`` on demand."""

    def __init__(self, sc: Scenario, design: Design):
        self.sc = sc
        self.design = design
        self.ff = solve_feedforward(design.lqt, design.lp, reference_function(sc, design.lp.E.shape[0]),
                                    sc.T, sc.h)

    def run(self, alpha: float, decimate: int = 1, record: bool = True) -> RunTrace:
        return simulate_run(self.sc, self.design.controller(alpha), self.ff, self.design.lp,
                            decimate=decimate, record=record)

    def cost(self, alpha: float) -> float:
        return self.run(alpha, record=False).J


def sweep_alpha(sc: Scenario, design: Design, alphas, workers: int = 1) -> list[tuple[float, float]]:
    """Cost curve ``[(alpha, J(alpha)), ...]`` with identical signals for every alpha."""
    runner = LoopRunner(sc, design)
    alphas = [float(a) for a in alphas]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            costs = list(pool.map(runner.cost, alphas))
    else:
        costs = [runner.cost(a) for a in alphas]
    return list(zip(alphas, costs))


def write_trace_csv(trace: RunTrace, path, decimate: int = 1) -> Path:
    """Write a trace as CSV with a trailing ``#`` summary line."""
    path = Path(path)
    n = trace.x.shape[1]
    state_cols = ["theta1", "theta2", "dtheta1", "dtheta2"] if n == 4 else [f"x{i + 1}" for i in range(n)]
    m, p, p1 = trace.u.shape[1], trace.y.shape[1], trace.r.shape[1]
    cols = (["t"] + state_cols
            + (["u", "u_r", "u_f"] if m == 1 else
               [f"u{i + 1}" for i in range(m)] + [f"u_r{i + 1}" for i in range(m)] + [f"u_f{i + 1}" for i in range(m)])
            + [f"y{i + 1}" for i in range(p)]
            + (["r"] if p1 == 1 else [f"r{i + 1}" for i in range(p1)]))
    data = np.hstack([trace.t[:, None], trace.x, trace.u, trace.u_r, trace.u_f, trace.y, trace.r])
    data = data[:: max(1, int(decimate))]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        np.savetxt(fh, data, delimiter=",", fmt="%.10g")
        fh.write(f"# J={trace.J!r} alpha={trace.alpha!r} diverged={str(trace.diverged).lower()}\n")
    return path


def rk4_step(f, t: float, x, h: float):
    k1 = f(t, x)
    k2 = f(t + h / 2, x + h / 2 * k1)
    k3 = f(t + h / 2, x + h / 2 * k2)
    k4 = f(t + h, x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
