"""Config -> plant -> design -> scenario, plus the design report."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import TARGET_LQT_POLES, TARGET_OBSERVER_POLES, Config, ConfigError
from .controller import closed_loop_matrix
from .linalg import LinalgError, care_residual, is_hurwitz
from .plant import LinearPlant, pendulum_linearize
from .signals import Signal, WhiteNoise
from .sim import Design, Scenario
from .synthesis import (InfeasibleGammaError, SynthesisError, build_augmented_plant, design_lqt,
                        design_observer, design_observer_poles, gamma_optimal, synthesize_qfilter)


def _chol_psd(M: np.ndarray) -> np.ndarray:
    """``S`` with ``S'S = M`` for symmetric PSD ``M``."""
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))).T


def performance_maps(E: np.ndarray, Q: np.ndarray, R: np.ndarray):
    """``C1 = [S_Q E; 0]`` and ``D12 = [0; S_R]`` so that C1'C1 = E'QE, D12'D12 = R, C1'D12 = 0."""
    SQ, SR = _chol_psd(Q), _chol_psd(R)
    C1 = np.vstack([SQ @ E, np.zeros((SR.shape[0], E.shape[1]))])
    D12 = np.vstack([np.zeros((SQ.shape[0], SR.shape[1])), SR])
    return C1, D12


def build_plant(cfg: Config) -> LinearPlant:
    """Linear design model; bad parameters or matrix shapes raise :class:`ConfigError`."""
    try:
        return _build_plant(cfg)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"plant: {exc}") from exc


def _build_plant(cfg: Config) -> LinearPlant:
    Q = np.array(cfg.design.Q, dtype=float)
    R = np.array(cfg.design.R, dtype=float)
    if cfg.plant.kind == "pendulum":
        lp = pendulum_linearize(cfg.pendulum_params())
        C1, D12 = performance_maps(lp.E, Q, R)
        return LinearPlant(A=lp.A, B1=lp.B1, B2=lp.B2, C1=C1, C2=lp.C2, D12=D12, D21=lp.D21, E=lp.E)
    mats = {k: np.array(v, dtype=float) for k, v in cfg.plant.matrices.model_dump().items() if v is not None}
    if "C1" not in mats or "D12" not in mats:
        mats["C1"], mats["D12"] = performance_maps(mats["E"], Q, R)
    return LinearPlant(**mats)


def build_design(cfg: Config, lp: LinearPlant | None = None) -> Design:
    """Linearize, then LQT, observer, augmented plant and residual filter.

    Raises :class:`SynthesisError` naming the failing stage.
    """
    if lp is None:
        lp = build_plant(cfg)
    try:
        lp.check_assumptions()
    except ValueError as exc:
        raise SynthesisError("plant", str(exc)) from exc
    lqt = design_lqt(lp, cfg.design.Q, cfg.design.R)
    oc = cfg.design.observer
    if oc.method == "poles":
        obs = design_observer_poles(lp, [complex(re, im) for re, im in oc.poles])
    else:
        obs = design_observer(lp, oc.W_proc, oc.W_meas)
    gp = build_augmented_plant(lp, lqt, obs)
    qf = synthesize_qfilter(gp, cfg.design.gamma, eps=cfg.design.regularization_eps)
    return Design(lp=lp, lqt=lqt, obs=obs, qfilter=qf)


def _signal(sec) -> Signal:
    return Signal(kind=sec.kind, amplitude=sec.amplitude_rad, frequency=sec.frequency, rate=sec.rate)


def build_scenario(cfg: Config, lp: LinearPlant | None = None) -> Scenario:
    s = cfg.scenario
    plant = cfg.pendulum_params() if cfg.plant.kind == "pendulum" else (lp or build_plant(cfg))
    d = s.disturbance
    return Scenario(
        plant=plant,
        reference=_signal(s.reference),
        T=s.T, h=s.h,
        Q=np.array(cfg.design.Q, dtype=float), R=np.array(cfg.design.R, dtype=float),
        disturbance=_signal(d),
        disturbance_channel=d.channel,
        disturbance_dir=None if d.direction is None else np.array(d.direction, dtype=float),
        noise=WhiteNoise(std=s.noise.std, seed=s.noise.seed),
        x0=None if s.x0 is None else np.array(s.x0, dtype=float),
        name=s.preset or "custom",
    )


# ------------------------------------------------------------------ report

def match_error(poles, target) -> float:
    """Largest relative distance after optimally pairing ``poles`` with ``target``."""
    poles = np.asarray(poles, dtype=complex)
    target = np.asarray(target, dtype=complex)
    C = np.abs(poles[:, None] - target[None, :]) / np.abs(target)[None, :]
    r, c = linear_sum_assignment(C)
    return float(C[r, c].max())


def _cplx(v):
    return [[float(z.real), float(z.imag)] for z in np.sort_complex(np.asarray(v, dtype=complex))]


def _mat(M):
    return np.asarray(M, dtype=float).tolist()


def lqt_interpretations(cfg: Config) -> list[dict]:
    """LQT poles for the weight reading in use and with Q and R swapped."""
    target = [complex(*p) for p in TARGET_LQT_POLES]
    Q = np.array(cfg.design.Q, dtype=float)
    R = np.array(cfg.design.R, dtype=float)
    rows = []
    for label, (Qi, Ri) in {"C1'C1=Q, D12'D12=R": (Q, R), "swapped (R=C1'C1, Q=D12'D12)": (R, Q)}.items():
        entry = {"reading": label, "Q": _mat(Qi), "R": _mat(Ri)}
        try:
            if Qi.shape != Q.shape or Ri.shape != R.shape:
                raise SynthesisError("lqt", "swapped weights do not fit the plant dimensions")
            lp = build_plant(cfg)
            lqt = design_lqt(lp, Qi, Ri)
            poles = np.linalg.eigvals(lp.A + lp.B2 @ lqt.F)
            err = match_error(poles, target)
            entry.update(poles=_cplx(poles), max_rel_err=err, within_2pct=err <= 0.02)
        except (SynthesisError, LinalgError) as exc:
            entry.update(error=str(exc))
        rows.append(entry)
    return rows


def z_readings(cfg: Config, lqt, obs) -> list[dict]:
    """Optimal H-inf level of the filter problem for alternative performance outputs."""
    base = build_plant(cfg)
    sq, sr = float(np.sqrt(cfg.design.Q[0][0])), float(np.sqrt(cfg.design.R[0][0]))
    E = base.E
    cands = {
        "stacked p_z=2: z=[sqrt(Q) ytilde; sqrt(R) u]": (np.vstack([sq * E, 0 * E]), np.array([[0.0], [sr]])),
        "swapped p_z=2: z=[sqrt(R) ytilde; sqrt(Q) u]": (np.vstack([sr * E, 0 * E]), np.array([[0.0], [sq]])),
        "summed p_z=1: z=sqrt(Q) ytilde + sqrt(R) u": (sq * E, np.array([[sr]])),
    }
    rows = []
    for label, (C1, D12) in cands.items():
        lp = LinearPlant(A=base.A, B1=base.B1, B2=base.B2, C1=C1, C2=base.C2, D12=D12, D21=base.D21, E=E)
        try:
            g = gamma_optimal(build_augmented_plant(lp, lqt, obs), rtol=1e-6,
                              eps=cfg.design.regularization_eps)
            rows.append({"reading": label, "gamma_opt": g, "gamma_0.21_feasible": g < 0.21})
        except SynthesisError as exc:
            rows.append({"reading": label, "error": str(exc)})
    return rows


def design_report(cfg: Config, design: Design) -> dict:
    lp, lqt, obs, qf = design.lp, design.lqt, design.obs, design.qfilter
    Qx = lp.E.T @ lqt.Q @ lp.E
    ctrl = design.controller(1.0)
    A_bar, _, _ = closed_loop_matrix(ctrl, lp)
    rep = {
        "plant": {"kind": cfg.plant.kind, "A": _mat(lp.A), "B1": _mat(lp.B1), "B2": _mat(lp.B2),
                  "C1": _mat(lp.C1), "C2": _mat(lp.C2), "D12": _mat(lp.D12), "D21": _mat(lp.D21),
                  "E": _mat(lp.E), "open_loop_eigenvalues": _cplx(np.linalg.eigvals(lp.A))},
        "lqt": {"Q": _mat(lqt.Q), "R": _mat(lqt.R), "F": _mat(lqt.F), "P": _mat(lqt.P),
                "care_residual": float(np.linalg.norm(care_residual(lp.A, lp.B2, Qx, lqt.R, lqt.P))),
                "poles": _cplx(np.linalg.eigvals(lp.A + lp.B2 @ lqt.F)),
                "hurwitz": is_hurwitz(lp.A + lp.B2 @ lqt.F)},
        "observer": {"method": obs.method, "L": _mat(obs.L),
                     "eigenvalues": _cplx(obs.eigenvalues(lp)),
                     "hurwitz": is_hurwitz(lp.A + obs.L @ lp.C2)},
        "qfilter": {"gamma_target": qf.gamma, "achieved_norm": qf.achieved, "n_q": qf.n_q,
                    "A_q": _mat(qf.A_q), "B_q": _mat(qf.B_q), "F_q": _mat(qf.F_q),
                    "A_q_eigenvalues": _cplx(np.linalg.eigvals(qf.A_q)),
                    "hurwitz": is_hurwitz(qf.A_q), **qf.info},
        "closed_loop": {"eigenvalues": _cplx(np.linalg.eigvals(A_bar)),
                        "hurwitz": is_hurwitz(A_bar)},
    }
    if obs.Y is not None:
        rep["observer"]["care_residual"] = float(np.linalg.norm(
            care_residual(lp.A.T, lp.C2.T, np.array(cfg.design.observer.W_proc),
                          np.array(cfg.design.observer.W_meas), obs.Y)))
    if cfg.plant.kind == "pendulum":
        rep["reference_values"] = {
            "lqt_interpretations": lqt_interpretations(cfg),
            "observer_target_max_rel_err": match_error(obs.eigenvalues(lp),
                                                       [complex(*p) for p in TARGET_OBSERVER_POLES]),
            "z_readings": z_readings(cfg, lqt, obs),
            "gamma_0.21_feasible": _gamma_feasible(lp, lqt, obs, 0.21, cfg.design.regularization_eps),
        }
    return rep


def _gamma_feasible(lp, lqt, obs, gamma, eps) -> bool:
    try:
        synthesize_qfilter(build_augmented_plant(lp, lqt, obs), gamma, eps=eps)
    except InfeasibleGammaError:
        return False
    return True


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, default=_json_default)


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.write_text(report_json(report))
    return path
